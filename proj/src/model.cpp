#include "occam/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <functional>
#include <iterator>
#include <numeric>

#include "occam/bytes.hpp"
#include "occam/errors.hpp"

namespace occam {

namespace {

constexpr std::uint16_t kMdlVersion = 1;

std::size_t product(const std::vector<std::size_t>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

void LayerTensor::validate() const {
  if (shape.empty() || std::any_of(shape.begin(), shape.end(), [](auto d) { return d == 0; }))
    throw ShapeMismatch("tensor '" + name + "' has an empty dimension");
  if (product(shape) != values.size())
    throw ShapeMismatch("tensor '" + name + "': shape product " + std::to_string(product(shape)) +
                        " != " + std::to_string(values.size()) + " values");
  for (float v : values)
    if (!std::isfinite(v)) throw InvalidInput("tensor '" + name + "' holds a non-finite value");
}

void Model::validate() const {
  const auto shapes = arch.weight_shapes();
  if (layers.size() != 2 * shapes.size())
    throw ArchError("model has " + std::to_string(layers.size()) + " tensors, architecture needs " +
                    std::to_string(2 * shapes.size()));
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    const LayerTensor& w = layers[2 * i];
    const LayerTensor& b = layers[2 * i + 1];
    w.validate();
    b.validate();
    if (w.name != shapes[i].name + ".weight" || w.shape != shapes[i].dims)
      throw ArchError("tensor '" + w.name + "' does not match stage " + shapes[i].name);
    if (b.name != shapes[i].name + ".bias" || b.shape != std::vector<std::size_t>{shapes[i].units})
      throw ArchError("tensor '" + b.name + "' does not match stage " + shapes[i].name);
  }
}

Model zero_model(const ArchSpec& arch) {
  Model m;
  m.arch = arch;
  for (const auto& ws : arch.weight_shapes()) {
    m.layers.push_back({ws.name + ".weight", ws.dims, std::vector<float>(ws.size(), 0.0f)});
    m.layers.push_back({ws.name + ".bias", {ws.units}, std::vector<float>(ws.units, 0.0f)});
  }
  return m;
}

bool bit_equal(const Model& a, const Model& b) {
  if (!(a.arch == b.arch) || a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.name != y.name || x.shape != y.shape || x.values.size() != y.values.size()) return false;
    if (!std::equal(x.values.begin(), x.values.end(), y.values.begin(),
                    [](float u, float v) { return std::bit_cast<std::uint32_t>(u) ==
                                                  std::bit_cast<std::uint32_t>(v); }))
      return false;
  }
  return true;
}

void TripletLayer::validate() const {
  const std::string where = "triplet layer '" + name + "': ";
  if (assignments.size() != support.size())
    throw MalformedTriplet(where + "k mismatch between support and assignments");
  for (std::size_t j = 0; j < support.size(); ++j) {
    if (support[j] >= p) throw MalformedTriplet(where + "support index out of range");
    if (j > 0 && support[j] <= support[j - 1])
      throw MalformedTriplet(where + "support is not strictly increasing");
  }
  if (!support.empty() && codebook.empty()) throw MalformedTriplet(where + "empty codebook");
  for (auto q : assignments)
    if (q >= codebook.size()) throw MalformedTriplet(where + "assignment out of codebook range");
  if (zero_cluster) {
    if (*zero_cluster >= codebook.size()) throw MalformedTriplet(where + "zero cluster out of range");
    if (codebook[*zero_cluster] != 0.0f) throw MalformedTriplet(where + "zero cluster is not exactly 0");
  }
  for (float c : codebook)
    if (!std::isfinite(c)) throw MalformedTriplet(where + "non-finite codebook entry");
}

std::size_t CompressedTriplet::total_k() const noexcept {
  std::size_t k = 0;
  for (const auto& l : layers) k += l.k();
  return k;
}

void CompressedTriplet::validate() const {
  for (const auto& l : layers) l.validate();
}

std::vector<float> decode_layer(const TripletLayer& layer) {
  layer.validate();
  std::vector<float> w(layer.p, 0.0f);
  for (std::size_t j = 0; j < layer.k(); ++j) w[layer.support[j]] = layer.codebook[layer.assignments[j]];
  return w;
}

Model decode_weights(const CompressedTriplet& t, const ArchSpec& arch) {
  Model m = zero_model(arch);
  if (t.layers.size() != m.weight_layer_count())
    throw ArchError("triplet has " + std::to_string(t.layers.size()) + " layers, architecture has " +
                    std::to_string(m.weight_layer_count()));
  for (std::size_t i = 0; i < t.layers.size(); ++i) {
    LayerTensor& w = m.weight(i);
    if (t.layers[i].p != w.size())
      throw ArchError("triplet layer '" + t.layers[i].name + "' has p=" +
                      std::to_string(t.layers[i].p) + ", architecture expects " +
                      std::to_string(w.size()));
    w.values = decode_layer(t.layers[i]);
  }
  return m;
}

void copy_biases(Model& dst, const Model& src) {
  if (dst.weight_layer_count() != src.weight_layer_count())
    throw ArchError("bias source has a different layer count");
  for (std::size_t i = 0; i < dst.weight_layer_count(); ++i) {
    if (dst.bias(i).shape != src.bias(i).shape) throw ArchError("bias shape mismatch");
    dst.bias(i).values = src.bias(i).values;
  }
}

std::vector<std::pair<float, float>> weight_range(const LayerTensor& layer,
                                                  RangeGranularity granularity) {
  if (layer.values.empty()) throw InvalidInput("weight_range of empty layer '" + layer.name + "'");
  auto extrema = [](auto first, auto last) {
    auto [lo, hi] = std::minmax_element(first, last);
    return std::pair{*lo, *hi};
  };
  if (granularity == RangeGranularity::per_layer)
    return {extrema(layer.values.begin(), layer.values.end())};

  if (layer.shape.size() != 4)
    throw GranularityError("per-filter range needs a conv tensor, '" + layer.name + "' has rank " +
                           std::to_string(layer.shape.size()));
  const std::size_t filters = layer.shape[0];
  const std::size_t per = layer.values.size() / filters;
  std::vector<std::pair<float, float>> out;
  out.reserve(filters);
  for (std::size_t f = 0; f < filters; ++f) {
    auto first = layer.values.begin() + static_cast<std::ptrdiff_t>(f * per);
    out.push_back(extrema(first, first + static_cast<std::ptrdiff_t>(per)));
  }
  return out;
}

void StochasticPosterior::validate() const {
  base.validate();
  const std::size_t L = base.weight_layer_count();
  if (noise.size() != L || support_mask.size() != L)
    throw ShapeMismatch("posterior noise/mask layer count does not match the model");
  for (std::size_t i = 0; i < L; ++i) {
    const auto& w = base.weight(i);
    if (support_mask[i].size() != w.size()) throw ShapeMismatch("support mask size mismatch");
    const auto& n = noise[i];
    if (n.sigma.empty()) throw ShapeMismatch("layer noise without scales");
    const std::size_t units = n.unit_size == 0 ? 1 : w.size() / n.unit_size;
    if (n.sigma.size() != units) throw ShapeMismatch("noise unit count mismatch");
    for (double s : n.sigma)
      if (!(s >= 0.0) || !std::isfinite(s)) throw InvalidInput("noise scale must be finite and >= 0");
  }
}

StochasticPosterior make_posterior(const CompressedTriplet& t, Model decoded, double fraction,
                                   RangeGranularity granularity) {
  if (!(fraction >= 0.0)) throw InvalidInput("noise fraction must be >= 0");
  StochasticPosterior post;
  const std::size_t L = decoded.weight_layer_count();
  if (t.layers.size() != L) throw ArchError("triplet/model layer count mismatch");
  for (std::size_t i = 0; i < L; ++i) {
    const LayerTensor& w = decoded.weight(i);
    const bool per_filter = granularity == RangeGranularity::per_filter && w.shape.size() == 4;
    const auto ranges =
        weight_range(w, per_filter ? RangeGranularity::per_filter : RangeGranularity::per_layer);
    LayerNoise n;
    n.unit_size = per_filter ? w.size() / w.shape[0] : 0;
    for (const auto& [lo, hi] : ranges)
      n.sigma.push_back(fraction * (static_cast<double>(hi) - static_cast<double>(lo)));
    post.noise.push_back(std::move(n));

    std::vector<std::uint8_t> mask(w.size(), 0);
    for (auto s : t.layers[i].support) mask.at(s) = 1;
    post.support_mask.push_back(std::move(mask));
  }
  post.base = std::move(decoded);
  return post;
}

std::vector<std::uint8_t> serialize_model(const Model& m) {
  ByteWriter w;
  w.text("MDL1");
  w.u16(kMdlVersion);
  if (m.layers.size() > 0xFFFF) throw InvalidInput("too many layers for MDL1");
  w.u16(static_cast<std::uint16_t>(m.layers.size()));
  for (const auto& t : m.layers) {
    t.validate();
    if (t.name.size() > 0xFFFF || t.shape.size() > 0xFF) throw InvalidInput("tensor header too large");
    w.u16(static_cast<std::uint16_t>(t.name.size()));
    w.text(t.name);
    w.u8(static_cast<std::uint8_t>(t.shape.size()));
    for (auto d : t.shape) {
      if (d > 0xFFFFFFFFu) throw InvalidInput("tensor dimension exceeds u32");
      w.u32(static_cast<std::uint32_t>(d));
    }
    for (float v : t.values) w.f32(v);
  }
  return w.take();
}

std::vector<LayerTensor> read_mdl1_tensors(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.text(4, "magic") != "MDL1") throw FormatError("bad magic, expected MDL1", 0);
  const auto version = r.u16("version");
  if (version != kMdlVersion)
    throw FormatError("unsupported MDL1 version " + std::to_string(version), 4);
  const auto count = r.u16("layer count");
  std::vector<LayerTensor> out;
  out.reserve(count);
  for (std::uint16_t i = 0; i < count; ++i) {
    LayerTensor t;
    const auto name_len = r.u16("layer name length");
    t.name = r.text(name_len, "layer name");
    const auto ndims = r.u8("dimension count");
    for (std::uint8_t d = 0; d < ndims; ++d) t.shape.push_back(r.u32("dimensions"));
    const std::size_t n = ndims == 0 ? 0 : product(t.shape);
    const std::size_t at = r.offset();
    if (n > r.remaining() / 4)
      throw FormatError("truncated input while reading values of '" + t.name + "'", at);
    t.values.resize(n);
    for (auto& v : t.values) v = r.f32("values");
    out.push_back(std::move(t));
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after last layer", r.offset());
  return out;
}

Model deserialize_model(std::span<const std::uint8_t> bytes, const ArchSpec& arch) {
  Model m;
  m.arch = arch;
  m.layers = read_mdl1_tensors(bytes);
  m.validate();
  return m;
}

std::filesystem::path arch_path_for(const std::filesystem::path& model_path) {
  auto p = model_path;
  p += ".arch";
  return p;
}

void save_model(const Model& m, const std::filesystem::path& path) {
  m.validate();
  write_file(path, serialize_model(m));
  save_arch(m.arch, arch_path_for(path));
}

Model load_model(const std::filesystem::path& path) {
  return load_model(path, load_arch(arch_path_for(path)));
}

Model load_model(const std::filesystem::path& path, const ArchSpec& arch) {
  return deserialize_model(read_file(path), arch);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error("write failed for " + path.string());
}

}  // namespace occam
