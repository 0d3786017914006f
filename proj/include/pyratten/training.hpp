#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pyratten/metrics_io.hpp"
#include "pyratten/network.hpp"
#include "pyratten/random.hpp"
#include "pyratten/tensor.hpp"

namespace pyratten {

struct TrainConfig {
  int batch_size = 16;
  int patch_size = 48;
  double lr0 = 1e-4;
  int lr_halve_every = 200;  // epochs
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double sigma = 30.0;  // noise std in 0-255 units
  int epochs = 1000;
  int steps_per_epoch = 1000;
  std::uint64_t seed = 0;
  bool augment = true;
  int checkpoint_every = 0;  // epochs; 0 means max(1, epochs / 10)

  void validate() const;
};

struct Batch {
  Tensor clean;
  Tensor noisy;
};

// Dihedral transform k in [0, 8): rotate by 90 * (k % 4) degrees
// counter-clockwise, after a horizontal flip when k >= 4.
Tensor dihedral(const Tensor& x, int k);

// x + N(0, (sigma255 / 255)^2) per element, unclipped.
Tensor add_awgn(const Tensor& x, double sigma255, Rng& rng);

Batch sample_batch(const Dataset& data, const TrainConfig& cfg, Rng& rng);

double lr_at(int epoch, const TrainConfig& cfg);

struct AdamState {
  std::vector<std::vector<Real>> m;
  std::vector<std::vector<Real>> v;
  std::int64_t t = 0;

  static AdamState for_store(const ParamStore& store);
};

// Bias-corrected Adam on every parameter using its accumulated gradient
// (a parameter without a gradient buffer counts as a zero gradient).
void adam_step(ParamStore& store, AdamState& state, double lr, const TrainConfig& cfg);

struct EpochLog {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  std::optional<double> eval_psnr;

  std::string to_json_line() const;
};

struct TrainOptions {
  std::string out_dir;                 // empty: no files are written
  std::ostream* log_stream = nullptr;  // per-epoch JSON lines
  const Dataset* validation = nullptr; // optional eval PSNR each epoch
  const ParamStore* initial = nullptr; // start from these instead of fresh init
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

TrainResult train(const Dataset& data, const NetworkConfig& net_cfg, const TrainConfig& cfg,
                  const TrainOptions& options = {});

struct EvalResult {
  double psnr_db = 0.0;
  double ssim = 0.0;
  int images = 0;
};

// Adds AWGN (seeded) to each clean image, restores it, quantises to 8 bit
// and averages PSNR/SSIM against the clean image.
EvalResult evaluate(const Dataset& data, const NetworkConfig& cfg, const ParamStore& store,
                    double sigma255, std::uint64_t seed);

}  // namespace pyratten
