#include "cli.hpp"

#include <cmath>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pyratten/config.hpp"
#include "pyratten/gradsuite.hpp"
#include "pyratten/kernels.hpp"
#include "pyratten/metrics_io.hpp"
#include "pyratten/network.hpp"
#include "pyratten/training.hpp"

namespace pyratten::cli {

namespace {

using nlohmann::json;

json load_run_document(const std::string& config_path, const std::vector<std::string>& overrides,
                       const NetworkConfig& base = NetworkConfig{}) {
  json doc = default_run_document();
  doc["network"] = to_json(base);
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw IoError("cannot open config '" + config_path + "'");
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config '" + config_path + "' is not valid JSON");
    merge_strict(doc, user);
  }
  for (const std::string& o : overrides) apply_override(doc, o);
  return doc;
}

void warn_sigma_mismatch(const Checkpoint& ckpt, double sigma, std::ostream& err) {
  if (ckpt.train_sigma && std::abs(*ckpt.train_sigma - sigma) > 1e-9) {
    err << "warning: checkpoint was trained with sigma " << *ckpt.train_sigma
        << ", running with sigma " << sigma << '\n';
  }
}

std::pair<int, int> parse_position(const std::string& text) {
  const auto comma = text.find(',');
  if (comma == std::string::npos) throw ConfigError("--pos must be X,Y, got '" + text + "'");
  try {
    std::size_t used_x = 0, used_y = 0;
    const std::string xs = text.substr(0, comma), ys = text.substr(comma + 1);
    const int x = std::stoi(xs, &used_x);
    const int y = std::stoi(ys, &used_y);
    if (used_x != xs.size() || used_y != ys.size()) throw std::invalid_argument("trailing");
    return {x, y};
  } catch (const std::logic_error&) {
    throw ConfigError("--pos must be two integers X,Y, got '" + text + "'");
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pyramid attention denoising toolkit", "pyratten"};
  app.require_subcommand(1);

  // train
  std::string config_path, data_dir, out_dir, val_dir;
  std::vector<std::string> overrides;
  std::optional<double> train_sigma;
  std::optional<std::uint64_t> train_seed;
  auto* train_cmd = app.add_subcommand("train", "Train a model on a directory of PNG images");
  train_cmd->add_option("--config", config_path, "JSON config ({\"network\":..., \"train\":...})");
  train_cmd->add_option("--data", data_dir, "Directory of training PNGs")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--val", val_dir, "Optional directory of validation PNGs");
  train_cmd->add_option("--sigma", train_sigma, "Noise level (0-255 units)");
  train_cmd->add_option("--seed", train_seed, "Random seed");
  train_cmd->add_option("--set", overrides, "Dotted override key=value (repeatable)");

  // denoise
  std::string ckpt_path, input_path, output_path;
  double sigma = 30.0;
  bool no_noise = false;
  std::uint64_t seed = 0;
  auto* denoise_cmd = app.add_subcommand("denoise", "Add noise to an image and restore it");
  denoise_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  denoise_cmd->add_option("--input", input_path, "Input PNG")->required();
  denoise_cmd->add_option("--output", output_path, "Output PNG")->required();
  denoise_cmd->add_option("--sigma", sigma, "Noise level (0-255 units)");
  denoise_cmd->add_flag("--no-noise", no_noise, "Restore the input as-is");
  denoise_cmd->add_option("--seed", seed, "Noise seed");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Mean PSNR/SSIM over a directory");
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  eval_cmd->add_option("--data", data_dir, "Directory of clean PNGs")->required();
  eval_cmd->add_option("--sigma", sigma, "Noise level (0-255 units)");
  eval_cmd->add_option("--seed", seed, "Noise seed");

  // attnmap
  std::string pos_text;
  int site = -1;
  auto* attn_cmd = app.add_subcommand("attnmap", "Export per-level attention maps of one query");
  attn_cmd->add_option("--ckpt", ckpt_path, "Checkpoint")->required();
  attn_cmd->add_option("--input", input_path, "Input PNG")->required();
  attn_cmd->add_option("--pos", pos_text, "Query position X,Y")->required();
  attn_cmd->add_option("--out", out_dir, "Output directory")->required();
  attn_cmd->add_option("--site", site, "Attention position (default: first)");

  // gradcheck
  std::string op_name;
  double eps = default_gradcheck_eps();
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference gradient suite");
  grad_cmd->add_option("--op", op_name, "Only this op");
  grad_cmd->add_option("--eps", eps, "Finite-difference step");
  grad_cmd->add_option("--seed", seed, "Shape/value seed");

  // params
  std::string preset;
  auto* params_cmd = app.add_subcommand("params", "Print the learnable parameter count");
  params_cmd->add_option("--config", config_path, "JSON config");
  params_cmd->add_option("--preset", preset, "panet or panet-s")
      ->check(CLI::IsMember({"panet", "panet-s"}));
  params_cmd->add_option("--set", overrides, "Dotted override key=value (repeatable)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kValidationError;
  }

  try {
    kernels::configure_threads_from_env();

    if (*train_cmd) {
      if (train_sigma) overrides.push_back("train.sigma=" + std::to_string(*train_sigma));
      if (train_seed) overrides.push_back("train.seed=" + std::to_string(*train_seed));
      const json doc = load_run_document(config_path, overrides);
      const NetworkConfig net = network_config_from_json(doc.at("network"));
      const TrainConfig cfg = train_config_from_json(doc.at("train"));
      const Dataset data = load_dataset(data_dir);
      std::optional<Dataset> val;
      if (!val_dir.empty()) val = load_dataset(val_dir);
      TrainOptions options;
      options.out_dir = out_dir;
      options.log_stream = &out;
      options.validation = val ? &*val : nullptr;
      train(data, net, cfg, options);
      return kOk;
    }

    if (*denoise_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const Image img = load_png(input_path);
      if (img.channels != ckpt.config.in_channels) {
        throw ShapeError("image has " + std::to_string(img.channels) + " channels, model expects " +
                         std::to_string(ckpt.config.in_channels));
      }
      NoTapeScope no_tape;
      Tensor x = image_to_tensor(img);
      if (!no_noise) {
        warn_sigma_mismatch(ckpt, sigma, err);
        Rng rng(seed);
        x = add_awgn(x, sigma, rng);
      }
      save_png(output_path, tensor_to_image(panet_forward(x, ckpt.config, ckpt.params)));
      return kOk;
    }

    if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      warn_sigma_mismatch(ckpt, sigma, err);
      const Dataset data = load_dataset(data_dir);
      const EvalResult r = evaluate(data, ckpt.config, ckpt.params, sigma, seed);
      json j{{"sigma", sigma}, {"ssim", r.ssim}, {"images", r.images}};
      if (std::isinf(r.psnr_db)) {
        j["psnr_db"] = "inf";
      } else {
        j["psnr_db"] = r.psnr_db;
      }
      out << json{{"sigma", j["sigma"]}, {"psnr_db", j["psnr_db"]}, {"ssim", j["ssim"]},
                  {"images", j["images"]}}
                 .dump()
          << '\n';
      return kOk;
    }

    if (*attn_cmd) {
      const auto [x, y] = parse_position(pos_text);
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      const Image img = load_png(input_path);
      const AttentionExport ex = export_attention_maps(ckpt.config, ckpt.params, img, y, x, out_dir, site);
      for (const auto& f : ex.files) out << f << '\n';
      return kOk;
    }

    if (*grad_cmd) {
      const auto results = run_gradient_suite(op_name, eps, seed);
      bool ok = true;
      for (const auto& r : results) {
        char line[256];
        std::snprintf(line, sizeof line, "%-26s %-16s max_rel_err=%.3e tol=%.0e %s",
                      r.name.c_str(), r.shape.c_str(), r.max_rel_error, r.tolerance,
                      r.passed ? "PASS" : "FAIL");
        out << line << '\n';
        ok = ok && r.passed;
      }
      return ok ? kOk : kGradcheckFailed;
    }

    if (*params_cmd) {
      const NetworkConfig base = preset == "panet-s" ? NetworkConfig::panet_small() : NetworkConfig::panet();
      const NetworkConfig net =
          network_config_from_json(load_run_document(config_path, overrides, base).at("network"));
      out << count_params(net) << '\n';
      return kOk;
    }
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const FormatError& e) {
    err << "error: " << e.what() << '\n';
    return kIoError;
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return kValidationError;
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << e.what() << '\n';
    return kValidationError;
  }
  return kValidationError;
}

}  // namespace pyratten::cli
