#include "occam/arch.hpp"

#include <fstream>
#include <sstream>

#include "occam/errors.hpp"

namespace occam {

Stage Stage::dense(int in, int out) {
  Stage s;
  s.kind = StageKind::dense;
  s.in = in;
  s.out = out;
  return s;
}

Stage Stage::conv2d(int in, int out, int kh, int kw, int stride, int padding) {
  Stage s;
  s.kind = StageKind::conv2d;
  s.in = in;
  s.out = out;
  s.kernel_h = kh;
  s.kernel_w = kw;
  s.stride = stride;
  s.padding = padding;
  return s;
}

Stage Stage::maxpool2d(int window, int stride) {
  Stage s;
  s.kind = StageKind::maxpool2d;
  s.window = window;
  s.stride = stride;
  return s;
}

Stage Stage::relu() { return Stage{}; }

Stage Stage::flatten() {
  Stage s;
  s.kind = StageKind::flatten;
  return s;
}

Stage Stage::softmax_logits() {
  Stage s;
  s.kind = StageKind::softmax_logits;
  return s;
}

namespace {

std::string describe(const Shape3& s) {
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," +
         std::to_string(s.width) + ")";
}

}  // namespace

std::vector<Shape3> ArchSpec::shapes() const {
  if (input.size() == 0 || input.channels <= 0 || input.height <= 0 || input.width <= 0)
    throw ArchError("input shape must be positive");
  if (classes < 1) throw ArchError("class count must be positive");
  if (stages.empty() || stages.back().kind != StageKind::softmax_logits)
    throw ArchError("architecture must end with softmax-logits");

  std::vector<Shape3> out;
  out.reserve(stages.size());
  Shape3 cur = input;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const Stage& s = stages[i];
    const std::string where = "stage " + std::to_string(i + 1) + ": ";
    switch (s.kind) {
      case StageKind::dense:
        if (!cur.flat()) throw ArchError(where + "dense needs a flat input, got " + describe(cur));
        if (s.in != cur.channels || s.out < 1)
          throw ArchError(where + "dense " + std::to_string(s.in) + " does not match input " +
                          describe(cur));
        cur = {s.out, 1, 1};
        break;
      case StageKind::conv2d: {
        if (s.in != cur.channels || s.out < 1 || s.kernel_h < 1 || s.kernel_w < 1 ||
            s.stride < 1 || s.padding < 0)
          throw ArchError(where + "conv2d does not match input " + describe(cur));
        const int h = (cur.height + 2 * s.padding - s.kernel_h) / s.stride + 1;
        const int w = (cur.width + 2 * s.padding - s.kernel_w) / s.stride + 1;
        if (cur.height + 2 * s.padding < s.kernel_h || cur.width + 2 * s.padding < s.kernel_w)
          throw ArchError(where + "kernel larger than input " + describe(cur));
        cur = {s.out, h, w};
        break;
      }
      case StageKind::relu:
        break;
      case StageKind::maxpool2d:
        if (s.window < 1 || s.stride < 1 || cur.height < s.window || cur.width < s.window)
          throw ArchError(where + "maxpool2d does not fit input " + describe(cur));
        cur = {cur.channels, (cur.height - s.window) / s.stride + 1,
               (cur.width - s.window) / s.stride + 1};
        break;
      case StageKind::flatten:
        cur = {static_cast<int>(cur.size()), 1, 1};
        break;
      case StageKind::softmax_logits:
        if (i + 1 != stages.size()) throw ArchError(where + "softmax-logits must be last");
        if (!cur.flat() || cur.channels != classes)
          throw ArchError(where + "logits " + describe(cur) + " do not match " +
                          std::to_string(classes) + " classes");
        break;
    }
    out.push_back(cur);
  }
  return out;
}

std::vector<WeightShape> ArchSpec::weight_shapes() const {
  validate();
  std::vector<WeightShape> out;
  int convs = 0;
  int denses = 0;
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const Stage& s = stages[i];
    if (!s.has_weights()) continue;
    WeightShape w;
    w.stage_index = i;
    w.units = static_cast<std::size_t>(s.out);
    if (s.kind == StageKind::conv2d) {
      w.name = "conv" + std::to_string(++convs);
      w.conv = true;
      w.dims = {static_cast<std::size_t>(s.out), static_cast<std::size_t>(s.in),
                static_cast<std::size_t>(s.kernel_h), static_cast<std::size_t>(s.kernel_w)};
      w.fan_in = static_cast<std::size_t>(s.in) * s.kernel_h * s.kernel_w;
    } else {
      w.name = "fc" + std::to_string(++denses);
      w.dims = {static_cast<std::size_t>(s.out), static_cast<std::size_t>(s.in)};
      w.fan_in = static_cast<std::size_t>(s.in);
    }
    out.push_back(std::move(w));
  }
  return out;
}

std::size_t ArchSpec::weight_count() const {
  std::size_t n = 0;
  for (const auto& w : weight_shapes()) n += w.size();
  return n;
}

ArchSpec parse_arch(std::string_view text) {
  ArchSpec arch;
  std::istringstream in{std::string(text)};
  std::string line;
  int lineno = 0;
  bool have_input = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    auto need = [&](int count) {
      std::vector<int> v(count);
      for (int& x : v)
        if (!(ls >> x)) throw ArchError("line " + std::to_string(lineno) + ": '" + word +
                                        "' expects " + std::to_string(count) + " integers");
      std::string extra;
      if (ls >> extra) throw ArchError("line " + std::to_string(lineno) + ": trailing '" + extra + "'");
      return v;
    };
    if (word == "input") {
      auto v = need(3);
      arch.input = {v[0], v[1], v[2]};
      have_input = true;
    } else if (word == "classes") {
      arch.classes = need(1)[0];
    } else if (word == "dense") {
      auto v = need(2);
      arch.stages.push_back(Stage::dense(v[0], v[1]));
    } else if (word == "conv2d") {
      auto v = need(6);
      arch.stages.push_back(Stage::conv2d(v[0], v[1], v[2], v[3], v[4], v[5]));
    } else if (word == "relu") {
      need(0);
      arch.stages.push_back(Stage::relu());
    } else if (word == "maxpool2d") {
      auto v = need(2);
      arch.stages.push_back(Stage::maxpool2d(v[0], v[1]));
    } else if (word == "flatten") {
      need(0);
      arch.stages.push_back(Stage::flatten());
    } else if (word == "softmax-logits") {
      need(0);
      arch.stages.push_back(Stage::softmax_logits());
    } else {
      throw ArchError("line " + std::to_string(lineno) + ": unknown stage '" + word + "'");
    }
  }
  if (!have_input) throw ArchError("missing 'input' line");
  arch.validate();
  return arch;
}

std::string to_text(const ArchSpec& arch) {
  std::ostringstream os;
  os << "input " << arch.input.channels << ' ' << arch.input.height << ' ' << arch.input.width
     << "\nclasses " << arch.classes << '\n';
  for (const Stage& s : arch.stages) {
    switch (s.kind) {
      case StageKind::dense: os << "dense " << s.in << ' ' << s.out; break;
      case StageKind::conv2d:
        os << "conv2d " << s.in << ' ' << s.out << ' ' << s.kernel_h << ' ' << s.kernel_w << ' '
           << s.stride << ' ' << s.padding;
        break;
      case StageKind::relu: os << "relu"; break;
      case StageKind::maxpool2d: os << "maxpool2d " << s.window << ' ' << s.stride; break;
      case StageKind::flatten: os << "flatten"; break;
      case StageKind::softmax_logits: os << "softmax-logits"; break;
    }
    os << '\n';
  }
  return os.str();
}

ArchSpec load_arch(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ArchError("cannot read architecture file " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_arch(ss.str());
}

void save_arch(const ArchSpec& arch, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f << to_text(arch);
}

ArchSpec named_arch(std::string_view name) {
  ArchSpec a;
  if (name == "lenet5") {
    a.input = {1, 28, 28};
    a.classes = 10;
    a.stages = {Stage::conv2d(1, 20, 5, 5), Stage::maxpool2d(2, 2), Stage::relu(),
                Stage::conv2d(20, 50, 5, 5), Stage::maxpool2d(2, 2), Stage::relu(),
                Stage::flatten(),         Stage::dense(800, 500),   Stage::relu(),
                Stage::dense(500, 10),    Stage::softmax_logits()};
  } else if (name == "lenet5-small") {
    a.input = {1, 28, 28};
    a.classes = 10;
    a.stages = {Stage::conv2d(1, 6, 5, 5),  Stage::relu(), Stage::maxpool2d(2, 2),
                Stage::conv2d(6, 16, 5, 5), Stage::relu(), Stage::maxpool2d(2, 2),
                Stage::flatten(),           Stage::dense(256, 120), Stage::relu(),
                Stage::dense(120, 84),      Stage::relu(),          Stage::dense(84, 10),
                Stage::softmax_logits()};
  } else if (name == "small-conv") {
    a.input = {1, 28, 28};
    a.classes = 10;
    a.stages = {Stage::conv2d(1, 16, 5, 5), Stage::maxpool2d(2, 2), Stage::relu(),
                Stage::conv2d(16, 32, 5, 5), Stage::maxpool2d(2, 2), Stage::relu(),
                Stage::flatten(),            Stage::dense(512, 256),  Stage::relu(),
                Stage::dense(256, 10),       Stage::softmax_logits()};
  } else if (name == "mlp-2d") {
    a.input = {2, 1, 1};
    a.classes = 2;
    a.stages = {Stage::dense(2, 16), Stage::relu(), Stage::dense(16, 2), Stage::softmax_logits()};
  } else {
    throw ArchError("unknown architecture '" + std::string(name) + "'");
  }
  a.validate();
  return a;
}

}  // namespace occam
