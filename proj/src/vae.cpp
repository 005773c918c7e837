#include "capkit/vae.hpp"

#include <cmath>
#include <numeric>

#include <json.hpp>

#include "capkit/checkpoint.hpp"
#include "capkit/error.hpp"
#include "capkit/rng.hpp"
#include "capkit/synth.hpp"

namespace capkit {

namespace {

constexpr int kC1 = 16;
constexpr int kC2 = 32;
constexpr int kC3 = 32;

std::vector<double> he_normal(Rng& rng, std::size_t n, int fan_in) {
  const double sd = std::sqrt(2.0 / fan_in);
  std::vector<double> v(n);
  for (auto& x : v) x = sd * rng.normal();
  return v;
}

// [H, W, 3] -> channel-first values appended to `out`.
void append_chw(const ArrayD& img, std::vector<double>& out) {
  const auto h = img.shape[0];
  const auto w = img.shape[1];
  for (int c = 0; c < 3; ++c) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) out.push_back(img.data[static_cast<std::size_t>((y * w + x) * 3 + c)]);
    }
  }
}

void check_image(const VaeConfig& cfg, const ArrayD& img) {
  CAPKIT_CHECK(img.shape.size() == 3 && img.shape[0] == cfg.height && img.shape[1] == cfg.width && img.shape[2] == 3,
               "shape_mismatch",
               "VAE expects [" + std::to_string(cfg.height) + ", " + std::to_string(cfg.width) + ", 3] images");
}

}  // namespace

VaeModel::VaeModel(const VaeConfig& config) : config_(config) {
  CAPKIT_CHECK(config.height % 8 == 0 && config.width % 8 == 0, "bad_config",
               "VAE image sides must be multiples of 8");
  CAPKIT_CHECK(config.latent_dim >= 1, "bad_config", "VAE latent_dim must be >= 1");
  Rng rng(config.seed);
  const int flat = kC3 * (config.height / 8) * (config.width / 8);
  auto conv = [&](const std::string& name, int out, int in) {
    params_.add(name + ".w", {out, in, 3, 3}, he_normal(rng, static_cast<std::size_t>(out) * in * 9, in * 9));
    params_.add(name + ".b", {out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
  };
  auto dense = [&](const std::string& name, int in, int out, double sd) {
    std::vector<double> w(static_cast<std::size_t>(in) * out);
    for (auto& x : w) x = sd * rng.normal();
    params_.add(name + ".w", {in, out}, std::move(w));
    params_.add(name + ".b", {out}, std::vector<double>(static_cast<std::size_t>(out), 0.0));
  };
  conv("enc1", kC1, 3);
  conv("enc2", kC2, kC1);
  conv("enc3", kC3, kC2);
  dense("mu", flat, config.latent_dim, std::sqrt(1.0 / flat));
  dense("logvar", flat, config.latent_dim, 0.1 * std::sqrt(1.0 / flat));
  dense("dec_in", config.latent_dim, flat, std::sqrt(2.0 / config.latent_dim));
  conv("dec1", kC3, kC3);
  conv("dec2", kC1, kC3);
  conv("dec3", 3, kC1);
}

VaeModel::Encoded VaeModel::encode(const ag::Var& x) const {
  using namespace ag;
  const int n = x.dim(0);
  Var h = relu(conv2d(x, params_.get("enc1.w"), params_.get("enc1.b"), 2, 1));
  h = relu(conv2d(h, params_.get("enc2.w"), params_.get("enc2.b"), 2, 1));
  h = relu(conv2d(h, params_.get("enc3.w"), params_.get("enc3.b"), 2, 1));
  h = reshape(h, {n, static_cast<int>(h.size()) / n});
  return {linear(h, params_.get("mu.w"), params_.get("mu.b")),
          linear(h, params_.get("logvar.w"), params_.get("logvar.b"))};
}

ag::Var VaeModel::decode(const ag::Var& z) const {
  using namespace ag;
  const int n = z.dim(0);
  Var h = relu(linear(z, params_.get("dec_in.w"), params_.get("dec_in.b")));
  h = reshape(h, {n, kC3, config_.height / 8, config_.width / 8});
  h = relu(conv2d(upsample2x(h), params_.get("dec1.w"), params_.get("dec1.b"), 1, 1));
  h = relu(conv2d(upsample2x(h), params_.get("dec2.w"), params_.get("dec2.b"), 1, 1));
  return sigmoid(conv2d(upsample2x(h), params_.get("dec3.w"), params_.get("dec3.b"), 1, 1));
}

VaeTrainResult train_vae(const std::vector<ArrayD>& images, const VaeConfig& config) {
  CAPKIT_CHECK(!images.empty(), "bad_config", "no images to train the VAE on");
  for (const auto& img : images) check_image(config, img);
  VaeTrainResult result{VaeModel(config), {}, {}};
  VaeModel& model = result.model;
  ag::Adam opt(model.params(), {config.learning_rate});
  Rng rng(config.seed ^ 0x5EEDULL);

  // Inputs (masked) and targets (full), channel-first.
  std::vector<std::vector<double>> inputs, targets;
  for (const auto& img : images) {
    std::vector<double> in, tgt;
    append_chw(mask_regions(img).image, in);
    append_chw(img, tgt);
    inputs.push_back(std::move(in));
    targets.push_back(std::move(tgt));
  }
  const int h = config.height, w = config.width, d = config.latent_dim;
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(order);
    double loss_sum = 0.0, recon_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const int n = static_cast<int>(end - start);
      std::vector<double> xb, yb, eps;
      for (std::size_t i = start; i < end; ++i) {
        xb.insert(xb.end(), inputs[order[i]].begin(), inputs[order[i]].end());
        yb.insert(yb.end(), targets[order[i]].begin(), targets[order[i]].end());
      }
      for (int i = 0; i < n * d; ++i) eps.push_back(rng.normal());

      using namespace ag;
      const Var x = constant({n, 3, h, w}, std::move(xb));
      const Var y = constant({n, 3, h, w}, std::move(yb));
      auto enc = model.encode(x);
      const Var z = add(enc.mean, mul(exp(scale(enc.log_var, 0.5)), constant({n, d}, std::move(eps))));
      const Var recon = mean(square(sub(model.decode(z), y)));
      // KL(q || N(0, I)) summed over latent dims, averaged over the batch.
      const Var kl = scale(sum(sub(add_scalar(enc.log_var, 1.0), add(square(enc.mean), exp(enc.log_var)))),
                           -0.5 / n);
      const Var loss = add(recon, scale(kl, config.beta));
      CAPKIT_CHECK(std::isfinite(loss.item()), "diverged",
                   "VAE loss became non-finite in epoch " + std::to_string(epoch + 1) + " (lr " +
                       std::to_string(config.learning_rate) + ", beta " + std::to_string(config.beta) + ")");
      model.params().zero_grad();
      backward(loss);
      opt.step();
      loss_sum += loss.item();
      recon_sum += recon.item();
      ++batches;
    }
    result.loss_history.push_back(loss_sum / static_cast<double>(batches));
    result.recon_history.push_back(recon_sum / static_cast<double>(batches));
  }
  return result;
}

std::vector<double> vae_encode(const VaeModel& model, const ArrayD& image) {
  check_image(model.config(), image);
  ag::NoGradGuard guard;
  std::vector<double> x;
  append_chw(mask_regions(image).image, x);
  const auto& c = model.config();
  return model.encode(ag::constant({1, 3, c.height, c.width}, std::move(x))).mean.value();
}

ArrayD vae_encode_clip(const VaeModel& model, const ArrayD& frames) {
  const auto& c = model.config();
  CAPKIT_CHECK(frames.shape.size() == 4 && frames.shape[1] == c.height && frames.shape[2] == c.width &&
                   frames.shape[3] == 3,
               "shape_mismatch", "VAE clip encode expects [T, H, W, 3] at the model resolution");
  const int t_n = static_cast<int>(frames.shape[0]);
  ag::NoGradGuard guard;
  std::vector<double> x;
  const std::size_t per = static_cast<std::size_t>(c.height) * c.width * 3;
  for (int t = 0; t < t_n; ++t) {
    ArrayD img({c.height, c.width, 3},
               std::vector<double>(frames.data.begin() + static_cast<std::ptrdiff_t>(t * per),
                                   frames.data.begin() + static_cast<std::ptrdiff_t>((t + 1) * per)));
    append_chw(mask_regions(img).image, x);
  }
  const auto mu = model.encode(ag::constant({t_n, 3, c.height, c.width}, std::move(x))).mean;
  return ArrayD({t_n, c.latent_dim}, mu.value());
}

ArrayD vae_reconstruct(const VaeModel& model, const ArrayD& image) {
  check_image(model.config(), image);
  ag::NoGradGuard guard;
  const auto& c = model.config();
  std::vector<double> x;
  append_chw(mask_regions(image).image, x);
  const auto out = model.decode(model.encode(ag::constant({1, 3, c.height, c.width}, std::move(x))).mean);
  ArrayD img({c.height, c.width, 3});
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < c.height; ++y) {
      for (int xx = 0; xx < c.width; ++xx) {
        img.data[static_cast<std::size_t>((y * c.width + xx) * 3 + ch)] =
            out.value()[static_cast<std::size_t>((ch * c.height + y) * c.width + xx)];
      }
    }
  }
  return img;
}

void save_vae(const std::string& path, const VaeModel& model) {
  const auto& c = model.config();
  nlohmann::json cfg = {{"kind", "vae"},         {"height", c.height},         {"width", c.width},
                        {"latent_dim", c.latent_dim}, {"epochs", c.epochs},     {"batch_size", c.batch_size},
                        {"learning_rate", c.learning_rate}, {"beta", c.beta}, {"seed", c.seed}};
  TarWriter tar;
  tar.add("config.json", cfg.dump(1));
  add_params(tar, model.params());
  tar.save(path);
}

VaeModel load_vae(const std::string& path) {
  const auto e = read_tar(path);
  auto it = e.find("config.json");
  CAPKIT_CHECK(it != e.end(), "bad_archive", path + " has no config.json");
  const auto j = nlohmann::json::parse(it->second);
  CAPKIT_CHECK(j.value("kind", "") == "vae", "bad_archive", path + " is not a VAE archive");
  VaeConfig c;
  c.height = j.at("height");
  c.width = j.at("width");
  c.latent_dim = j.at("latent_dim");
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta = j.value("beta", c.beta);
  c.seed = j.value("seed", c.seed);
  VaeModel m(c);
  load_params(e, m.params());
  return m;
}

}  // namespace capkit
