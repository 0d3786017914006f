#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "pyratten/attention.hpp"
#include "pyratten/ops.hpp"
#include "pyratten/tensor.hpp"

namespace pyratten {

class Rng;

struct NetworkConfig {
  int in_channels = 3;
  int feature_channels = 64;
  int num_blocks = 80;
  // Attention after block k (0 = before the first block, num_blocks = after
  // the last one).
  std::set<int> attention_positions{40};
  PyramidAttentionConfig attention;

  void validate() const;

  static NetworkConfig panet();
  static NetworkConfig panet_small();
};

// Named learnable tensors in insertion order.
class ParamStore {
 public:
  void add(const std::string& name, Tensor value);
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);
  std::size_t size() const { return entries_.size(); }
  std::size_t numel() const;

  auto begin() { return entries_.begin(); }
  auto end() { return entries_.end(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  void zero_grad();
  void set_requires_grad(bool on);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct ResidualBlockParams {
  ConvSpec conv1;
  ConvSpec conv2;
};

// x + conv3x3(relu(conv3x3(x))).
Tensor residual_block(const Tensor& x, const ResidualBlockParams& params);

// Fresh parameters: He-uniform weights, zero biases.
ParamStore init_params(const NetworkConfig& cfg, std::uint64_t seed);
// Every parameter set to zero.
ParamStore zero_params(const NetworkConfig& cfg);

// Views into a store, shaped for the individual ops.
ConvSpec conv3x3(const ParamStore& store, const std::string& prefix);
ResidualBlockParams block_params(const ParamStore& store, int block);
AttentionParams attention_params(const ParamStore& store, int position);

// Head conv, residual trunk with attention at the configured positions
// (applied as features + attention(features)), body-end conv, global
// pathway from the head features, tail conv.
Tensor panet_forward(const Tensor& img, const NetworkConfig& cfg, const ParamStore& store);

// Runs the network up to the input of the attention inserted at
// `position`.
Tensor features_at_attention(const Tensor& img, const NetworkConfig& cfg,
                             const ParamStore& store, int position);

std::size_t count_params(const NetworkConfig& cfg);

Tensor loss(const Tensor& pred, const Tensor& target);

struct Checkpoint {
  NetworkConfig config;
  ParamStore params;
  std::optional<double> train_sigma;
};

// Little-endian "PANT" v1 container; see README for the layout.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);
std::vector<std::uint8_t> serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::vector<std::uint8_t>& bytes);

}  // namespace pyratten
