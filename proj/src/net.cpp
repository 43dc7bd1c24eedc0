#include "maga/net.hpp"

#include <cmath>
#include <stdexcept>

#include "maga/ops.hpp"
#include "maga/random.hpp"

namespace maga {

namespace {

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

Tensor gaussian_init(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = stddev * rng.next_normal();
  return Tensor::from_data(std::move(shape), std::move(v));
}

Tensor he_conv_init(Shape shape, Rng& rng) {
  double fan_in = static_cast<double>(shape[1] * shape[2] * shape[3]);
  return gaussian_init(std::move(shape), std::sqrt(2.0 / fan_in), rng);
}

// Width of the decoder stream at resolution H / r.
std::size_t width_at(const NetConfig& cfg, std::size_t r) {
  if (r == 2) return cfg.c2;
  if (r == 4) return cfg.c4;
  return cfg.c8;
}

std::size_t detail_width(const NetConfig& cfg, std::size_t r) {
  switch (r) {
    case 2: return cfg.c2;
    case 4: return cfg.c4;
    case 8: return cfg.c8;
    default: return 0;  // no detail level at this resolution
  }
}

// Input channels of the fuse conv at resolution H / r: the incoming stream
// plus the matching detail level. At the entry resolution the stream is the
// semantic map joined with every detail at or below it.
std::size_t fuse_in_width(const NetConfig& cfg, std::size_t r) {
  if (r == cfg.patch) {
    std::size_t ch = cfg.dim + detail_width(cfg, r);
    for (std::size_t k = 2 * r; k <= 8; k *= 2) ch += detail_width(cfg, k);
    return ch;
  }
  return width_at(cfg, 2 * r) + detail_width(cfg, r);
}

Tensor conv_in_gelu(const Tensor& x, const ParamStore& ps, const std::string& prefix,
                    std::size_t stride) {
  Tensor y = conv2d(x, ps.get(prefix + ".w"), stride, 1);
  y = add_channel_bias(y, ps.get(prefix + ".b"));
  y = instance_norm(y).y;
  return gelu(y);
}

}  // namespace

void NetConfig::validate() const {
  require(patch == 4 || patch == 8 || patch == 16, "patch must be 4, 8 or 16");
  require(height % 8 == 0 && width % 8 == 0, "height and width must be multiples of 8");
  require(height % patch == 0 && width % patch == 0, "patch must divide height and width");
  require(height >= 2 * patch && width >= 2 * patch, "need at least a 2x2 token grid");
  require(depth >= 1, "depth must be at least 1");
  require(n_maga <= depth, "n_maga cannot exceed depth");
  require(c2 >= 1 && c4 >= 1 && c8 >= 1, "detail widths must be positive");
  block_config().validate();
}

MagaConfig NetConfig::block_config() const {
  MagaConfig b;
  b.dim = dim;
  b.heads = heads;
  b.kernel = kernel;
  b.reweight_kernel = reweight_kernel;
  b.branches = branches;
  return b;
}

std::set<std::string> net_config_keys() {
  return {"height", "width", "patch",  "dim",  "depth", "n_maga", "heads", "kernel",
          "reweight_kernel", "branches", "c2", "c4", "c8", "seed", "composition_loss"};
}

NetConfig net_config_from_kv(const KvConfig& kv) {
  NetConfig cfg;
  if (kv.has("height")) cfg.height = kv.get_u64("height");
  if (kv.has("width")) cfg.width = kv.get_u64("width");
  if (kv.has("patch")) cfg.patch = kv.get_u64("patch");
  if (kv.has("dim")) cfg.dim = kv.get_u64("dim");
  if (kv.has("depth")) cfg.depth = kv.get_u64("depth");
  if (kv.has("n_maga")) cfg.n_maga = kv.get_u64("n_maga");
  if (kv.has("heads")) cfg.heads = kv.get_u64("heads");
  if (kv.has("kernel")) cfg.kernel = kv.get_u64("kernel");
  if (kv.has("reweight_kernel")) cfg.reweight_kernel = kv.get_u64("reweight_kernel");
  if (kv.has("branches")) cfg.branches = parse_branch_set(kv.get_str("branches"));
  if (kv.has("c2")) cfg.c2 = kv.get_u64("c2");
  if (kv.has("c4")) cfg.c4 = kv.get_u64("c4");
  if (kv.has("c8")) cfg.c8 = kv.get_u64("c8");
  if (kv.has("seed")) cfg.seed = kv.get_u64("seed");
  if (kv.has("composition_loss")) cfg.composition_loss = kv.get_bool("composition_loss");
  cfg.validate();
  return cfg;
}

void net_config_to_kv(const NetConfig& cfg, KvConfig& kv) {
  kv.set("height", std::to_string(cfg.height));
  kv.set("width", std::to_string(cfg.width));
  kv.set("patch", std::to_string(cfg.patch));
  kv.set("dim", std::to_string(cfg.dim));
  kv.set("depth", std::to_string(cfg.depth));
  kv.set("n_maga", std::to_string(cfg.n_maga));
  kv.set("heads", std::to_string(cfg.heads));
  kv.set("kernel", std::to_string(cfg.kernel));
  kv.set("reweight_kernel", std::to_string(cfg.reweight_kernel));
  kv.set("branches", branch_set_name(cfg.branches));
  kv.set("c2", std::to_string(cfg.c2));
  kv.set("c4", std::to_string(cfg.c4));
  kv.set("c8", std::to_string(cfg.c8));
  kv.set("seed", std::to_string(cfg.seed));
  kv.set("composition_loss", cfg.composition_loss ? "true" : "false");
}

ParamStore init_matting_params(const NetConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  ParamStore ps;
  std::size_t s = cfg.patch, d = cfg.dim, n = cfg.hp() * cfg.wp();

  ps.add("embed.w", gaussian_init({4 * s * s, d}, 0.02, rng));
  ps.add("embed.b", Tensor::zeros({d}));
  ps.add("embed.pos", Tensor::zeros({n, d}));

  MagaConfig bc = cfg.block_config();
  for (std::size_t i = 0; i < cfg.depth; ++i) {
    Rng block_rng(mix_seed(cfg.seed, 1000 + i));
    append_block_params(ps, "enc" + std::to_string(i), bc, i < cfg.n_maga, block_rng);
  }

  ps.add("detail.s1.w", he_conv_init({cfg.c2, 4, 3, 3}, rng));
  ps.add("detail.s1.b", Tensor::zeros({cfg.c2}));
  ps.add("detail.s2.w", he_conv_init({cfg.c4, cfg.c2, 3, 3}, rng));
  ps.add("detail.s2.b", Tensor::zeros({cfg.c4}));
  ps.add("detail.s3.w", he_conv_init({cfg.c8, cfg.c4, 3, 3}, rng));
  ps.add("detail.s3.b", Tensor::zeros({cfg.c8}));

  for (std::size_t r = cfg.patch; r >= 2; r /= 2) {
    std::string name = "dec.f" + std::to_string(r);
    ps.add(name + ".w", he_conv_init({width_at(cfg, r), fuse_in_width(cfg, r), 3, 3}, rng));
    ps.add(name + ".b", Tensor::zeros({width_at(cfg, r)}));
  }
  // small random head: per-pixel logits start varied, which keeps the early
  // "push everything to zero" gradient from coordinating into a saturated
  // all-zeros matte (a sticky L1 local minimum)
  ps.add("dec.head.w", gaussian_init({1, cfg.c2, 3, 3}, 0.02, rng));
  ps.add("dec.head.b", Tensor::zeros({1}));
  return ps;
}

Tensor matting_forward(const ParamStore& ps, const NetConfig& cfg, const Tensor& image,
                       const Tensor& trimap) {
  cfg.validate();
  require(image.rank() == 3 && image.extent(0) == 3 && image.extent(1) == cfg.height &&
              image.extent(2) == cfg.width,
          "matting_forward: image must be (3, H, W) matching the config");
  require(trimap.rank() == 2 && trimap.extent(0) == cfg.height && trimap.extent(1) == cfg.width,
          "matting_forward: trimap must be (H, W) matching the config");
  for (std::size_t i = 0; i < trimap.numel(); ++i)
    require(trimap[i] == 0.0 || trimap[i] == 0.5 || trimap[i] == 1.0,
            "matting_forward: trimap values must be 0, 0.5 or 1");

  Tensor tri_chan = reshape(trimap, {1, cfg.height, cfg.width});
  Tensor img4 = concat_channels({image, tri_chan});

  // semantic trunk
  Tensor tokens = add_bias_row(matmul(extract_patches(img4, cfg.patch), ps.get("embed.w")),
                               ps.get("embed.b"));
  tokens = add(tokens, ps.get("embed.pos"));
  MagaConfig bc = cfg.block_config();
  for (std::size_t i = 0; i < cfg.depth; ++i)
    tokens = encoder_block(tokens, ps, "enc" + std::to_string(i), bc, cfg.hp(), cfg.wp(),
                           i < cfg.n_maga);
  Tensor sem = tokens_to_map(tokens, cfg.hp(), cfg.wp());

  // detail pyramid
  Tensor f2 = conv_in_gelu(img4, ps, "detail.s1", 2);
  Tensor f4 = conv_in_gelu(f2, ps, "detail.s2", 2);
  Tensor f8 = conv_in_gelu(f4, ps, "detail.s3", 2);
  auto detail_at = [&](std::size_t r) -> const Tensor* {
    if (r == 2) return &f2;
    if (r == 4) return &f4;
    if (r == 8) return &f8;
    return nullptr;
  };

  // decoder: fuse at the entry resolution, then climb to H/2
  std::vector<Tensor> first = {sem};
  if (const Tensor* d = detail_at(cfg.patch)) first.push_back(*d);
  for (std::size_t k = 2 * cfg.patch; k <= 8; k *= 2) {
    Tensor up = *detail_at(k);
    for (std::size_t r = k; r > cfg.patch; r /= 2) up = upsample2_bilinear(up);
    first.push_back(up);
  }
  Tensor cur = first.size() == 1 ? first[0] : concat_channels(first);
  cur = gelu(add_channel_bias(conv2d(cur, ps.get("dec.f" + std::to_string(cfg.patch) + ".w"), 1, 1),
                              ps.get("dec.f" + std::to_string(cfg.patch) + ".b")));
  for (std::size_t r = cfg.patch / 2; r >= 2; r /= 2) {
    cur = upsample2_bilinear(cur);
    if (const Tensor* d = detail_at(r)) cur = concat_channels({cur, *d});
    std::string name = "dec.f" + std::to_string(r);
    cur = gelu(add_channel_bias(conv2d(cur, ps.get(name + ".w"), 1, 1), ps.get(name + ".b")));
  }
  cur = upsample2_nearest(cur);
  Tensor logits = add_channel_bias(conv2d(cur, ps.get("dec.head.w"), 1, 1), ps.get("dec.head.b"));
  return sigmoid(logits);
}

Tensor matting_loss(const ParamStore& ps, const NetConfig& cfg, const SynthSample& sample) {
  Tensor pred = matting_forward(ps, cfg, sample.image, sample.trimap);
  Tensor gt = reshape(sample.alpha, {1, cfg.height, cfg.width});
  std::size_t n = cfg.height * cfg.width;
  std::vector<double> m(n);
  for (std::size_t i = 0; i < n; ++i) m[i] = sample.trimap[i] == 0.5 ? 1.0 : 0.0;
  Tensor mask = Tensor::from_data({1, cfg.height, cfg.width}, std::move(m));
  Tensor loss = masked_l1(pred, gt, mask);
  if (cfg.composition_loss)
    loss = add(loss, composition_l1(pred, sample.fg, sample.bg, sample.image));
  return loss;
}

double train_step(ParamStore& params, const NetConfig& cfg, const std::vector<SynthSample>& batch,
                  AdamState& opt) {
  require(!batch.empty(), "train_step: empty batch");
  Graph g;
  ParamStore tracked = params.tracked(g);
  Tensor total = matting_loss(tracked, cfg, batch[0]);
  for (std::size_t i = 1; i < batch.size(); ++i)
    total = add(total, matting_loss(tracked, cfg, batch[i]));
  total = scale(total, 1.0 / static_cast<double>(batch.size()));
  Gradients grads = g.backward(total);
  adam_step(params, tracked, grads, opt);
  return total.item();
}

}  // namespace maga
