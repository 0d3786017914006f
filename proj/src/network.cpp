#include "pyratten/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>

#include "pyratten/config.hpp"
#include "pyratten/random.hpp"

namespace pyratten {

void NetworkConfig::validate() const {
  if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
  if (feature_channels < 1) throw ConfigError("feature_channels must be >= 1");
  if (num_blocks < 1) throw ConfigError("num_blocks must be >= 1");
  for (int p : attention_positions) {
    if (p < 0 || p > num_blocks) {
      throw ConfigError("attention position " + std::to_string(p) + " outside [0, " +
                        std::to_string(num_blocks) + "]");
    }
  }
  if (!attention_positions.empty()) {
    attention.validate();
    if (attention.feature_channels != feature_channels) {
      throw ConfigError("attention.feature_channels (" +
                        std::to_string(attention.feature_channels) +
                        ") must equal feature_channels (" + std::to_string(feature_channels) +
                        ")");
    }
  }
}

NetworkConfig NetworkConfig::panet() { return NetworkConfig{}; }

NetworkConfig NetworkConfig::panet_small() {
  NetworkConfig cfg;
  cfg.num_blocks = 8;
  cfg.attention_positions = {4};
  return cfg;
}

void ParamStore::add(const std::string& name, Tensor value) {
  if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  index_.emplace(name, entries_.size());
  entries_.emplace_back(name, std::move(value));
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second].second;
}

std::size_t ParamStore::numel() const {
  std::size_t total = 0;
  for (const auto& [name, t] : entries_) total += t.numel();
  return total;
}

void ParamStore::zero_grad() {
  for (auto& [name, t] : entries_) t.zero_grad();
}

void ParamStore::set_requires_grad(bool on) {
  for (auto& [name, t] : entries_) t.set_requires_grad(on);
}

Tensor residual_block(const Tensor& x, const ResidualBlockParams& params) {
  return add(x, conv2d(relu(conv2d(x, params.conv1)), params.conv2));
}

namespace {

std::string block_name(int block, int conv) {
  return "block." + std::to_string(block) + ".conv" + std::to_string(conv);
}

std::string attention_name(int position, const char* embedding) {
  return "attention." + std::to_string(position) + "." + embedding;
}

// Calls visit(name, shape, fan_in) for every parameter in store order.
template <typename Visit>
void for_each_param(const NetworkConfig& cfg, Visit&& visit) {
  const int c = cfg.feature_channels, in = cfg.in_channels;
  auto conv = [&](const std::string& prefix, int c_out, int c_in, int k) {
    visit(prefix + ".weight", Shape{c_out, c_in, k, k}, c_in * k * k);
    visit(prefix + ".bias", Shape{c_out, 1, 1, 1}, 0);
  };
  auto attention = [&](int pos) {
    const int e = cfg.attention.embed_channels;
    conv(attention_name(pos, "w_f"), e, c, 1);
    conv(attention_name(pos, "w_g"), e, c, 1);
    conv(attention_name(pos, "w_theta"), c, c, 1);
  };
  conv("head", c, in, 3);
  if (cfg.attention_positions.count(0)) attention(0);
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    conv(block_name(b, 1), c, c, 3);
    conv(block_name(b, 2), c, c, 3);
    if (cfg.attention_positions.count(b)) attention(b);
  }
  conv("body_end", c, c, 3);
  conv("tail", in, c, 3);
}

void check_pyramid_geometry(const Shape& features, const NetworkConfig& cfg) {
  if (cfg.attention_positions.empty()) return;
  for (double s : cfg.attention.scales) {
    const long h = std::lround(features.h * s);
    const long w = std::lround(features.w * s);
    if (h < 2 || w < 2) {
      throw GeometryError("input " + std::to_string(features.h) + "x" +
                          std::to_string(features.w) + " too small for pyramid scale " +
                          std::to_string(s) + " (level would be " + std::to_string(h) +
                          "x" + std::to_string(w) + ", need >= 2x2)");
    }
  }
}

Tensor attend_residual(const Tensor& h, const NetworkConfig& cfg, const ParamStore& store,
                       int position) {
  return add(h, pyramid_attention(h, cfg.attention, attention_params(store, position)));
}

}  // namespace

ParamStore init_params(const NetworkConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ParamStore store;
  for_each_param(cfg, [&](const std::string& name, Shape shape, int fan_in) {
    store.add(name, fan_in > 0 ? he_uniform(shape, fan_in, rng) : Tensor(shape));
  });
  return store;
}

ParamStore zero_params(const NetworkConfig& cfg) {
  cfg.validate();
  ParamStore store;
  for_each_param(cfg, [&](const std::string& name, Shape shape, int) {
    store.add(name, Tensor(shape));
  });
  return store;
}

ConvSpec conv3x3(const ParamStore& store, const std::string& prefix) {
  return ConvSpec{store.get(prefix + ".weight"), store.get(prefix + ".bias"), 1, 1, 1};
}

ResidualBlockParams block_params(const ParamStore& store, int block) {
  return {conv3x3(store, block_name(block, 1)), conv3x3(store, block_name(block, 2))};
}

AttentionParams attention_params(const ParamStore& store, int position) {
  auto pointwise = [&](const char* embedding) {
    const std::string prefix = attention_name(position, embedding);
    return ConvSpec{store.get(prefix + ".weight"), store.get(prefix + ".bias"), 1, 0, 0};
  };
  return {pointwise("w_f"), pointwise("w_g"), pointwise("w_theta")};
}

Tensor panet_forward(const Tensor& img, const NetworkConfig& cfg, const ParamStore& store) {
  cfg.validate();
  if (img.shape().c != cfg.in_channels) {
    throw ShapeError("network expects " + std::to_string(cfg.in_channels) +
                     " input channels, got " + img.shape().str());
  }
  check_pyramid_geometry(img.shape(), cfg);
  const Tensor head = conv2d(img, conv3x3(store, "head"));
  Tensor h = head;
  if (cfg.attention_positions.count(0)) h = attend_residual(h, cfg, store, 0);
  for (int b = 1; b <= cfg.num_blocks; ++b) {
    h = residual_block(h, block_params(store, b));
    if (cfg.attention_positions.count(b)) h = attend_residual(h, cfg, store, b);
  }
  h = add(conv2d(h, conv3x3(store, "body_end")), head);
  return conv2d(h, conv3x3(store, "tail"));
}

Tensor features_at_attention(const Tensor& img, const NetworkConfig& cfg,
                             const ParamStore& store, int position) {
  cfg.validate();
  if (!cfg.attention_positions.count(position)) {
    throw ConfigError("no attention module at position " + std::to_string(position));
  }
  check_pyramid_geometry(img.shape(), cfg);
  Tensor h = conv2d(img, conv3x3(store, "head"));
  if (position == 0) return h;
  if (cfg.attention_positions.count(0)) h = attend_residual(h, cfg, store, 0);
  for (int b = 1; b <= position; ++b) {
    h = residual_block(h, block_params(store, b));
    if (b < position && cfg.attention_positions.count(b)) h = attend_residual(h, cfg, store, b);
  }
  return h;
}

std::size_t count_params(const NetworkConfig& cfg) {
  cfg.validate();
  std::size_t total = 0;
  for_each_param(cfg, [&](const std::string&, Shape shape, int) { total += shape.numel(); });
  return total;
}

Tensor loss(const Tensor& pred, const Tensor& target) { return l1_loss(pred, target); }

// ---------------------------------------------------------------------------
// Checkpoint container

namespace {

constexpr char kMagic[4] = {'P', 'A', 'N', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out.insert(out.end(), b, b + n);
  }
  template <typename T>
  void le(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    le(bits);
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}
  const std::uint8_t* take(std::size_t n) {
    if (pos_ + n > in_.size()) throw FormatError("checkpoint truncated at byte " + std::to_string(pos_));
    const std::uint8_t* p = in_.data() + pos_;
    pos_ += n;
    return p;
  }
  template <typename T>
  T le() {
    const std::uint8_t* p = take(sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(static_cast<T>(p[i]) << (8 * i));
    return v;
  }
  float f32() {
    const std::uint32_t bits = le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  const std::vector<std::uint8_t>& in_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.bytes(kMagic, 4);
  w.le<std::uint32_t>(kVersion);
  w.le<std::uint32_t>(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& [name, t] : ckpt.params) {
    w.le<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.bytes(name.data(), name.size());
    // Trailing unit extents are dropped: biases are stored as rank 1.
    const Shape& s = t.shape();
    int dims[4] = {s.n, s.c, s.h, s.w};
    int rank = 4;
    while (rank > 1 && dims[rank - 1] == 1) --rank;
    w.le<std::uint8_t>(static_cast<std::uint8_t>(rank));
    for (int i = 0; i < rank; ++i) w.le<std::uint32_t>(static_cast<std::uint32_t>(dims[i]));
    for (Real v : t.data()) w.f32(static_cast<float>(v));
  }
  nlohmann::json meta = to_json(ckpt.config);
  if (ckpt.train_sigma) meta["train_sigma"] = *ckpt.train_sigma;
  const std::string blob = meta.dump();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(blob.size()));
  w.bytes(blob.data(), blob.size());
  return std::move(w.out);
}

Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r(bytes);
  if (std::memcmp(r.take(4), kMagic, 4) != 0) throw FormatError("not a PANT checkpoint (bad magic)");
  const auto version = r.le<std::uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto count = r.le<std::uint32_t>();
  Checkpoint ckpt;
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto len = r.le<std::uint16_t>();
    const auto* name = r.take(len);
    const auto rank = r.le<std::uint8_t>();
    if (rank < 1 || rank > 4) throw FormatError("invalid tensor rank " + std::to_string(rank));
    int dims[4] = {1, 1, 1, 1};
    for (int i = 0; i < rank; ++i) dims[i] = static_cast<int>(r.le<std::uint32_t>());
    Tensor t(Shape{dims[0], dims[1], dims[2], dims[3]});
    for (Real& v : t.mutable_data()) v = static_cast<Real>(r.f32());
    ckpt.params.add(std::string(reinterpret_cast<const char*>(name), len), std::move(t));
  }
  const auto blob_len = r.le<std::uint32_t>();
  const auto* blob = r.take(blob_len);
  if (!r.done()) throw FormatError("trailing bytes after checkpoint config");
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(blob, blob + blob_len);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint config is not valid JSON: ") + e.what());
  }
  if (meta.contains("train_sigma")) {
    ckpt.train_sigma = meta.at("train_sigma").get<double>();
    meta.erase("train_sigma");
  }
  ckpt.config = network_config_from_json(meta);

  // The stored tensors must be exactly what the config describes.
  const ParamStore expected = zero_params(ckpt.config);
  if (expected.size() != ckpt.params.size()) {
    throw FormatError("checkpoint has " + std::to_string(ckpt.params.size()) +
                      " tensors, config describes " + std::to_string(expected.size()));
  }
  for (const auto& [name, t] : expected) {
    if (!ckpt.params.contains(name) || ckpt.params.get(name).shape() != t.shape()) {
      throw FormatError("checkpoint tensor '" + name + "' missing or mis-shaped");
    }
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = serialize_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

}  // namespace pyratten
