#include "pyratten/training.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include "json.hpp"
#include "pyratten/config.hpp"
#include "pyratten/kernels.hpp"

namespace pyratten {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (patch_size < 1) throw ConfigError("patch_size must be >= 1");
  if (!(lr0 > 0.0)) throw ConfigError("lr0 must be > 0");
  if (lr_halve_every < 1) throw ConfigError("lr_halve_every must be >= 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("eps must be > 0");
  if (!(sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (steps_per_epoch < 1) throw ConfigError("steps_per_epoch must be >= 1");
  if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
}

namespace {

// Horizontal flip of every plane.
Tensor flip(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor y(s);
  const Real* src = x.data().data();
  Real* dst = y.mutable_data().data();
  for (int p = 0; p < s.n * s.c; ++p) {
    for (int r = 0; r < s.h; ++r) {
      const Real* in = src + (static_cast<std::size_t>(p) * s.h + r) * s.w;
      Real* out = dst + (static_cast<std::size_t>(p) * s.h + r) * s.w;
      for (int c = 0; c < s.w; ++c) out[c] = in[s.w - 1 - c];
    }
  }
  return y;
}

// 90 degrees counter-clockwise: out[r][c] = in[c][W - 1 - r].
Tensor rot90(const Tensor& x) {
  const Shape& s = x.shape();
  Tensor y(Shape{s.n, s.c, s.w, s.h});
  const Real* src = x.data().data();
  Real* dst = y.mutable_data().data();
  for (int p = 0; p < s.n * s.c; ++p) {
    const Real* in = src + static_cast<std::size_t>(p) * s.plane();
    Real* out = dst + static_cast<std::size_t>(p) * s.plane();
    for (int r = 0; r < s.w; ++r) {
      for (int c = 0; c < s.h; ++c) out[r * s.h + c] = in[c * s.w + (s.w - 1 - r)];
    }
  }
  return y;
}

}  // namespace

Tensor dihedral(const Tensor& x, int k) {
  if (k < 0 || k >= 8) throw ConfigError("dihedral index must be in [0, 8)");
  Tensor y = k >= 4 ? flip(x) : x.clone();
  for (int i = 0; i < k % 4; ++i) y = rot90(y);
  return y;
}

Tensor add_awgn(const Tensor& x, double sigma255, Rng& rng) {
  if (!(sigma255 >= 0.0)) throw ConfigError("noise sigma must be >= 0");
  Tensor y = x.clone();
  if (sigma255 == 0.0) return y;
  const double stddev = sigma255 / 255.0;
  for (Real& v : y.mutable_data()) v = static_cast<Real>(v + stddev * rng.normal());
  return y;
}

Batch sample_batch(const Dataset& data, const TrainConfig& cfg, Rng& rng) {
  if (data.empty()) throw DatasetError("training dataset is empty");
  const int p = cfg.patch_size;
  const int channels = data.images.front().shape().c;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Shape& s = data.images[i].shape();
    const std::string name = i < data.names.size() ? data.names[i] : "#" + std::to_string(i);
    if (s.h < p || s.w < p) {
      throw DatasetError("image '" + name + "' (" + std::to_string(s.w) + "x" +
                         std::to_string(s.h) + ") is smaller than the " + std::to_string(p) +
                         "x" + std::to_string(p) + " training patch");
    }
    if (s.c != channels) {
      throw DatasetError("image '" + name + "' has " + std::to_string(s.c) +
                         " channels, expected " + std::to_string(channels));
    }
  }

  Tensor clean(Shape{cfg.batch_size, channels, p, p});
  const std::size_t item = static_cast<std::size_t>(channels) * p * p;
  for (int b = 0; b < cfg.batch_size; ++b) {
    const Tensor& img = data.images[rng.below(data.size())];
    const Shape& s = img.shape();
    const int y0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.h - p + 1)));
    const int x0 = static_cast<int>(rng.below(static_cast<std::uint64_t>(s.w - p + 1)));
    Tensor crop(Shape{1, channels, p, p});
    Real* dst = crop.mutable_data().data();
    for (int c = 0; c < channels; ++c) {
      for (int y = 0; y < p; ++y) {
        for (int x = 0; x < p; ++x) {
          *dst++ = img.at(0, c, y0 + y, x0 + x);
        }
      }
    }
    if (cfg.augment) crop = dihedral(crop, static_cast<int>(rng.below(8)));
    std::copy(crop.data().begin(), crop.data().end(), clean.mutable_data().begin() + b * item);
  }
  return Batch{clean, add_awgn(clean, cfg.sigma, rng)};
}

double lr_at(int epoch, const TrainConfig& cfg) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  return cfg.lr0 * std::pow(0.5, epoch / cfg.lr_halve_every);
}

AdamState AdamState::for_store(const ParamStore& store) {
  AdamState state;
  for (const auto& [name, t] : store) {
    state.m.emplace_back(t.numel(), Real(0));
    state.v.emplace_back(t.numel(), Real(0));
  }
  return state;
}

void adam_step(ParamStore& store, AdamState& state, double lr, const TrainConfig& cfg) {
  if (state.m.size() != store.size() || state.v.size() != store.size()) {
    throw ShapeError("Adam state tracks " + std::to_string(state.m.size()) +
                     " tensors, store has " + std::to_string(store.size()));
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  std::size_t i = 0;
  for (auto& [name, param] : store) {
    auto& m = state.m[i];
    auto& v = state.v[i];
    ++i;
    if (m.size() != param.numel() || v.size() != param.numel()) {
      throw ShapeError("Adam state for '" + name + "' does not match the parameter shape");
    }
    if (!param.has_grad()) continue;  // zero gradient: moments decay, no update needed
    auto g = param.grad();
    auto w = param.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = g[k];
      const double mk = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * gk;
      const double vk = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * gk * gk;
      m[k] = static_cast<Real>(mk);
      v[k] = static_cast<Real>(vk);
      const double step = lr * (mk / bc1) / (std::sqrt(vk / bc2) + cfg.eps);
      w[k] = static_cast<Real>(w[k] - step);
    }
  }
}

std::string EpochLog::to_json_line() const {
  nlohmann::json j{{"epoch", epoch}, {"lr", lr}, {"train_loss", train_loss}};
  if (eval_psnr) j["eval_psnr"] = *eval_psnr;
  return j.dump();
}

TrainResult train(const Dataset& data, const NetworkConfig& net_cfg, const TrainConfig& cfg,
                  const TrainOptions& options) {
  net_cfg.validate();
  cfg.validate();
  if (data.empty()) throw DatasetError("training dataset is empty");
  kernels::FlushDenormalsScope flush;

  TrainResult result;
  result.checkpoint.config = net_cfg;
  result.checkpoint.train_sigma = cfg.sigma;
  ParamStore& store = result.checkpoint.params;
  if (options.initial) {
    for (const auto& [name, t] : *options.initial) store.add(name, t.clone());
  } else {
    // Separate streams for initialisation and data.
    store = init_params(net_cfg, cfg.seed * 2 + 1);
  }
  store.set_requires_grad(true);
  AdamState adam = AdamState::for_store(store);
  Rng rng(cfg.seed * 2);

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    std::error_code ec;
    fs::create_directories(options.out_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + options.out_dir + "': " + ec.message());
    const std::string log_path = (fs::path(options.out_dir) / "train_log.jsonl").string();
    log_file.open(log_path, std::ios::trunc);
    if (!log_file) throw IoError("cannot open '" + log_path + "' for writing");
  }
  const int ckpt_every = cfg.checkpoint_every > 0 ? cfg.checkpoint_every : std::max(1, cfg.epochs / 10);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at(epoch, cfg);
    double loss_sum = 0.0;
    for (int step = 0; step < cfg.steps_per_epoch; ++step) {
      const Batch batch = sample_batch(data, cfg, rng);
      store.zero_grad();
      double value;
      {
        Tape tape;
        TapeScope scope(tape);
        const Tensor pred = panet_forward(batch.noisy, net_cfg, store);
        const Tensor l = loss(pred, batch.clean);
        value = l.item();
        if (!std::isfinite(value)) {
          std::ostringstream msg;
          msg << "non-finite training loss at epoch " << epoch + 1 << ", step " << step + 1
              << " (lr " << lr << ", " << tape.size() << " recorded ops)";
          throw NumericError(msg.str());
        }
        tape.backward(l);
      }
      adam_step(store, adam, lr, cfg);
      loss_sum += value;
    }

    EpochLog entry{epoch + 1, lr, loss_sum / cfg.steps_per_epoch, std::nullopt};
    if (options.validation && !options.validation->empty()) {
      entry.eval_psnr = evaluate(*options.validation, net_cfg, store, cfg.sigma, cfg.seed).psnr_db;
    }
    const std::string line = entry.to_json_line();
    if (options.log_stream) *options.log_stream << line << '\n' << std::flush;
    if (log_file.is_open()) log_file << line << '\n' << std::flush;
    result.log.push_back(entry);

    if (!options.out_dir.empty() && (epoch + 1) % ckpt_every == 0 && epoch + 1 != cfg.epochs) {
      save_checkpoint((fs::path(options.out_dir) /
                       ("checkpoint_epoch_" + std::to_string(epoch + 1) + ".pant"))
                          .string(),
                      result.checkpoint);
    }
  }
  store.zero_grad();
  if (!options.out_dir.empty()) {
    save_checkpoint((fs::path(options.out_dir) / "model.pant").string(), result.checkpoint);
  }
  return result;
}

EvalResult evaluate(const Dataset& data, const NetworkConfig& cfg, const ParamStore& store,
                    double sigma255, std::uint64_t seed) {
  if (data.empty()) throw DatasetError("evaluation dataset is empty");
  kernels::FlushDenormalsScope flush;
  NoTapeScope no_tape;
  Rng rng(seed);
  EvalResult result;
  double psnr_sum = 0.0, ssim_sum = 0.0;
  for (const Tensor& clean : data.images) {
    const Tensor noisy = add_awgn(clean, sigma255, rng);
    const Image restored = tensor_to_image(panet_forward(noisy, cfg, store));
    const Image reference = tensor_to_image(clean);
    psnr_sum += psnr(restored, reference);
    ssim_sum += ssim(restored, reference);
    ++result.images;
  }
  result.psnr_db = psnr_sum / result.images;
  result.ssim = ssim_sum / result.images;
  return result;
}

}  // namespace pyratten
