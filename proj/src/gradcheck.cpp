#include "maga/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "maga/block.hpp"
#include "maga/graph.hpp"
#include "maga/net.hpp"
#include "maga/ops.hpp"
#include "maga/random.hpp"

namespace maga {

namespace {

Tensor rnd(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.next_range(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(v));
}

// Fixed random weights turn any output into a smooth scalar probe.
Tensor wsum(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

std::vector<std::size_t> pick_coords(std::size_t n, std::size_t m) {
  std::vector<std::size_t> out;
  if (m == 0 || m >= n) {
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = i;
    return out;
  }
  for (std::size_t k = 0; k < m; ++k) out.push_back(k * n / m);
  return out;
}

// Push every value at least `gap` away from zero, preserving sign (zero goes
// positive). Keeps relu and L1 fixtures off their kinks.
Tensor away_from_zero(const Tensor& t, double gap) {
  std::vector<double> v = t.vec();
  for (double& x : v) {
    if (x >= 0.0 && x < gap) x += gap;
    else if (x < 0.0 && x > -gap) x -= gap;
  }
  return Tensor::from_data(t.shape(), std::move(v));
}

}  // namespace

GradCheckResult check_problem(const FdProblem& p, double tol, double h,
                              std::size_t max_coords_per_input, double corrupt_first) {
  Graph g;
  std::vector<Tensor> tracked;
  tracked.reserve(p.inputs.size());
  for (const Tensor& t : p.inputs) tracked.push_back(g.leaf(t));
  Tensor loss = p.loss(tracked);
  if (loss.numel() != 1) throw std::invalid_argument("gradcheck: loss must be scalar");
  Gradients grads = g.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(tracked.size());
  for (const Tensor& t : tracked) analytic.push_back(grads.at(t));

  GradCheckResult res;
  res.name = p.name;
  bool first = true;
  for (std::size_t i = 0; i < p.inputs.size(); ++i) {
    for (std::size_t j : pick_coords(p.inputs[i].numel(), max_coords_per_input)) {
      auto eval = [&](double delta) {
        std::vector<Tensor> mod = p.inputs;
        std::vector<double> v = mod[i].vec();
        v[j] += delta;
        mod[i] = Tensor::from_data(mod[i].shape(), std::move(v));
        return p.loss(mod).item();
      };
      double fd = (eval(h) - eval(-h)) / (2.0 * h);
      double an = analytic[i][j];
      if (first) {
        an += corrupt_first;
        first = false;
      }
      double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-8});
      res.max_rel_err = std::max(res.max_rel_err, rel);
      ++res.n_coords;
    }
  }
  res.pass = res.max_rel_err <= tol;
  return res;
}

const std::vector<RegistryEntry>& gradcheck_registry() {
  static const std::vector<RegistryEntry> reg = [] {
    std::vector<RegistryEntry> r;
    auto entry = [&r](const std::string& name, std::function<FdProblem(std::uint64_t)> make) {
      r.push_back(RegistryEntry{name, std::move(make)});
    };

    entry("add", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 3}, rng);
      return FdProblem{"add", {rnd({2, 3}, rng), rnd({2, 3}, rng)},
                       [w](const std::vector<Tensor>& in) { return wsum(add(in[0], in[1]), w); }};
    });
    entry("sub", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 3}, rng);
      return FdProblem{"sub", {rnd({2, 3}, rng), rnd({2, 3}, rng)},
                       [w](const std::vector<Tensor>& in) { return wsum(sub(in[0], in[1]), w); }};
    });
    entry("mul", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 3}, rng);
      return FdProblem{"mul", {rnd({2, 3}, rng), rnd({2, 3}, rng)},
                       [w](const std::vector<Tensor>& in) { return wsum(mul(in[0], in[1]), w); }};
    });
    entry("scale", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 3}, rng);
      return FdProblem{"scale", {rnd({2, 3}, rng)},
                       [w](const std::vector<Tensor>& in) { return wsum(scale(in[0], 1.7), w); }};
    });
    entry("sigmoid", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 3}, rng);
      return FdProblem{"sigmoid", {rnd({2, 3}, rng, -2.0, 2.0)},
                       [w](const std::vector<Tensor>& in) { return wsum(sigmoid(in[0]), w); }};
    });
    entry("relu", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 3}, rng);
      return FdProblem{"relu", {away_from_zero(rnd({2, 3}, rng), 0.05)},
                       [w](const std::vector<Tensor>& in) { return wsum(relu(in[0]), w); }};
    });
    entry("gelu", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 3}, rng);
      return FdProblem{"gelu", {rnd({2, 3}, rng, -2.0, 2.0)},
                       [w](const std::vector<Tensor>& in) { return wsum(gelu(in[0]), w); }};
    });
    entry("reshape", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 4}, rng);
      return FdProblem{"reshape", {rnd({2, 6}, rng)}, [w](const std::vector<Tensor>& in) {
                         return wsum(reshape(in[0], {3, 4}), w);
                       }};
    });
    entry("transpose2d", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({4, 3}, rng);
      return FdProblem{"transpose2d", {rnd({3, 4}, rng)}, [w](const std::vector<Tensor>& in) {
                         return wsum(transpose2d(in[0]), w);
                       }};
    });
    entry("slice_cols", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 3}, rng);
      return FdProblem{"slice_cols", {rnd({3, 5}, rng)}, [w](const std::vector<Tensor>& in) {
                         return wsum(slice_cols(in[0], 1, 4), w);
                       }};
    });
    entry("concat_cols", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 5}, rng);
      return FdProblem{"concat_cols", {rnd({3, 2}, rng), rnd({3, 3}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(concat_cols({in[0], in[1]}), w);
                       }};
    });
    entry("concat_channels", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 3, 3}, rng);
      return FdProblem{"concat_channels", {rnd({1, 3, 3}, rng), rnd({2, 3, 3}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(concat_channels({in[0], in[1]}), w);
                       }};
    });
    entry("stack0", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 2, 2}, rng);
      return FdProblem{"stack0", {rnd({2, 2}, rng), rnd({2, 2}, rng), rnd({2, 2}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(stack0({in[0], in[1], in[2]}), w);
                       }};
    });
    entry("sum", [](std::uint64_t seed) {
      Rng rng(seed);
      return FdProblem{"sum", {rnd({2, 3}, rng)},
                       [](const std::vector<Tensor>& in) { return sum(in[0]); }};
    });
    entry("mean", [](std::uint64_t seed) {
      Rng rng(seed);
      return FdProblem{"mean", {rnd({2, 3}, rng)},
                       [](const std::vector<Tensor>& in) { return mean(in[0]); }};
    });
    entry("matmul", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 2}, rng);
      return FdProblem{"matmul", {rnd({3, 4}, rng), rnd({4, 2}, rng)},
                       [w](const std::vector<Tensor>& in) { return wsum(matmul(in[0], in[1]), w); }};
    });
    entry("softmax_rows", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 4}, rng);
      return FdProblem{"softmax_rows", {rnd({3, 4}, rng, -2.0, 2.0)},
                       [w](const std::vector<Tensor>& in) { return wsum(softmax_rows(in[0]), w); }};
    });
    entry("add_bias_row", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 4}, rng);
      return FdProblem{"add_bias_row", {rnd({3, 4}, rng), rnd({4}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(add_bias_row(in[0], in[1]), w);
                       }};
    });
    entry("add_channel_bias", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 3, 3}, rng);
      return FdProblem{"add_channel_bias", {rnd({2, 3, 3}, rng), rnd({2}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(add_channel_bias(in[0], in[1]), w);
                       }};
    });
    entry("scale_channels", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 3, 2, 2}, rng);
      return FdProblem{"scale_channels", {rnd({2, 3, 2, 2}, rng), rnd({6}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(scale_channels(in[0], in[1]), w);
                       }};
    });
    entry("max_over_axis", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 4}, rng);
      Tensor x = rnd({3, 2, 4}, rng);
      // widen the winner's lead so +-h never flips the argmax
      std::vector<double> v = x.vec();
      for (std::size_t o = 0; o < 8; ++o) {
        std::size_t best = 0;
        for (std::size_t t = 1; t < 3; ++t)
          if (v[t * 8 + o] > v[best * 8 + o]) best = t;
        v[best * 8 + o] += 0.5;
      }
      return FdProblem{"max_over_axis", {Tensor::from_data({3, 2, 4}, std::move(v))},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(max_over_axis(in[0], 0).values, w);
                       }};
    });
    entry("conv2d_sparse", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 5, 5}, rng);
      std::vector<std::uint8_t> active(25);
      for (auto& a : active) a = rng.next_unit() < 0.7;
      ActiveSiteMask mask(5, 5, active);
      return FdProblem{"conv2d_sparse", {rnd({2, 5, 5}, rng), rnd({3, 2, 3, 3}, rng)},
                       [w, mask](const std::vector<Tensor>& in) {
                         return wsum(conv2d_sparse(in[0], in[1], mask), w);
                       }};
    });
    entry("conv2d_sparse_depthwise", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 5, 5}, rng);
      std::vector<std::uint8_t> active(25);
      for (auto& a : active) a = rng.next_unit() < 0.7;
      ActiveSiteMask mask(5, 5, active);
      return FdProblem{"conv2d_sparse_depthwise", {rnd({2, 5, 5}, rng), rnd({2, 1, 3}, rng)},
                       [w, mask](const std::vector<Tensor>& in) {
                         return wsum(conv2d_sparse_depthwise(in[0], in[1], mask), w);
                       }};
    });
    entry("conv2d", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({3, 3, 3}, rng);
      return FdProblem{"conv2d", {rnd({2, 6, 6}, rng), rnd({3, 2, 3, 3}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(conv2d(in[0], in[1], 2, 1), w);
                       }};
    });
    entry("conv1d_channels", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({8}, rng);
      return FdProblem{"conv1d_channels", {rnd({8}, rng), rnd({3}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(conv1d_channels(in[0], in[1]), w);
                       }};
    });
    entry("instance_norm", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor wy = rnd({2, 2, 3, 3}, rng);
      Tensor wm = rnd({4}, rng);
      Tensor ws = rnd({4}, rng);
      return FdProblem{"instance_norm", {rnd({2, 2, 3, 3}, rng)},
                       [wy, wm, ws](const std::vector<Tensor>& in) {
                         InstanceNormResult r = instance_norm(in[0]);
                         return add(add(wsum(r.y, wy), wsum(r.mean, wm)), wsum(r.std, ws));
                       }};
    });
    entry("layer_norm", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({4, 6}, rng);
      return FdProblem{"layer_norm", {rnd({4, 6}, rng), rnd({6}, rng, 0.5, 1.5), rnd({6}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(layer_norm(in[0], in[1], in[2]), w);
                       }};
    });
    entry("upsample2_bilinear", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 6, 6}, rng);
      return FdProblem{"upsample2_bilinear", {rnd({2, 3, 3}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(upsample2_bilinear(in[0]), w);
                       }};
    });
    entry("upsample2_nearest", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({2, 6, 6}, rng);
      return FdProblem{"upsample2_nearest", {rnd({2, 3, 3}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(upsample2_nearest(in[0]), w);
                       }};
    });
    entry("extract_patches", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({4, 8}, rng);
      return FdProblem{"extract_patches", {rnd({2, 4, 4}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(extract_patches(in[0], 2), w);
                       }};
    });
    entry("tokens_to_map", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({4, 2, 3}, rng);
      return FdProblem{"tokens_to_map", {rnd({6, 4}, rng)}, [w](const std::vector<Tensor>& in) {
                         return wsum(tokens_to_map(in[0], 2, 3), w);
                       }};
    });
    entry("map_to_tokens", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({6, 3}, rng);
      return FdProblem{"map_to_tokens", {rnd({3, 2, 3}, rng)}, [w](const std::vector<Tensor>& in) {
                         return wsum(map_to_tokens(in[0]), w);
                       }};
    });
    entry("masked_l1", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor pred = rnd({1, 4, 4}, rng, 0.0, 1.0);
      // keep |pred - gt| off the L1 kink
      std::vector<double> gv = pred.vec();
      for (double& x : gv) {
        double off = 0.1 + 0.4 * rng.next_unit();
        x = x >= 0.5 ? x - off : x + off;
      }
      std::vector<double> mv(16);
      for (double& x : mv) x = rng.next_unit() < 0.6 ? 1.0 : 0.0;
      Tensor mask = Tensor::from_data({1, 4, 4}, std::move(mv));
      return FdProblem{"masked_l1", {pred, Tensor::from_data({1, 4, 4}, std::move(gv))},
                       [mask](const std::vector<Tensor>& in) {
                         return masked_l1(in[0], in[1], mask);
                       }};
    });
    entry("composition_l1", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor alpha = rnd({1, 4, 4}, rng, 0.0, 1.0);
      Tensor fg = rnd({3, 4, 4}, rng, 0.0, 1.0);
      Tensor bg = rnd({3, 4, 4}, rng, 0.0, 1.0);
      // image offset from the exact composite keeps residuals off zero
      std::vector<double> iv(48);
      for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < 16; ++i) {
          double exact = alpha[i] * fg[c * 16 + i] + (1.0 - alpha[i]) * bg[c * 16 + i];
          double off = 0.15 + 0.2 * rng.next_unit();
          iv[c * 16 + i] = exact + (rng.next_unit() < 0.5 ? off : -off);
        }
      Tensor image = Tensor::from_data({3, 4, 4}, std::move(iv));
      return FdProblem{"composition_l1", {alpha}, [fg, bg, image](const std::vector<Tensor>& in) {
                         return composition_l1(in[0], fg, bg, image);
                       }};
    });
    entry("maga_attention", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor w = rnd({4, 6}, rng);
      return FdProblem{"maga_attention", {rnd({4, 6}, rng), rnd({4, 6}, rng), rnd({4, 6}, rng)},
                       [w](const std::vector<Tensor>& in) {
                         return wsum(maga_attention(in[0], in[1], in[2], 2), w);
                       }};
    });
    entry("morpho_reweight", [](std::uint64_t seed) {
      Rng rng(seed);
      Tensor wq = rnd({3, 4, 4}, rng);
      Tensor wr = rnd({6}, rng);
      return FdProblem{"morpho_reweight",
                       {rnd({3, 4, 4}, rng), rnd({3, 4, 4}, rng), rnd({3}, rng, -0.5, 0.5)},
                       [wq, wr](const std::vector<Tensor>& in) {
                         ReweightResult r = morpho_reweight({in[0], in[1]}, in[2]);
                         return add(wsum(r.q_f, wq), wsum(r.w_r, wr));
                       }};
    });
    entry("encoder_block", [](std::uint64_t seed) {
      MagaConfig cfg;
      cfg.dim = 4;
      cfg.heads = 2;
      return make_block_problem(cfg, seed);
    });
    return r;
  }();
  return reg;
}

FdProblem make_block_problem(const MagaConfig& cfg, std::uint64_t seed, std::size_t hp,
                             std::size_t wp) {
  cfg.validate();
  Rng rng(seed);
  // Small readout keeps finite-difference roundoff under tol * the 1e-8
  // denominator floor for structurally attenuated coordinates (taps of
  // branches that lose the max almost everywhere); healthy coordinates are
  // scale-invariant under it.
  Tensor w = rnd({hp * wp, cfg.dim}, rng, -2e-4, 2e-4);
  ParamStore proto;
  Rng prng(seed ^ 0x5bd1e995);
  append_block_params(proto, "blk", cfg, true, prng);
  // replace the degenerate zero/delta init with generic values
  std::vector<std::string> names = proto.names();
  std::vector<Tensor> inputs = {rnd({hp * wp, cfg.dim}, rng)};
  for (const std::string& name : names)
    inputs.push_back(rnd(proto.get(name).shape(), rng, -0.4, 0.4));
  MagaConfig c = cfg;
  return FdProblem{"encoder_block", inputs,
                   [w, names, c, hp, wp](const std::vector<Tensor>& in) {
                     ParamStore ps;
                     for (std::size_t i = 0; i < names.size(); ++i) ps.add(names[i], in[i + 1]);
                     return wsum(encoder_block(in[0], ps, "blk", c, hp, wp, true), w);
                   }};
}

GradCheckResult check_network(std::uint64_t seed, double tol, std::size_t coords_per_tensor) {
  NetConfig cfg;
  cfg.height = 16;
  cfg.width = 16;
  cfg.patch = 4;
  cfg.dim = 16;
  cfg.depth = 2;
  cfg.n_maga = 1;
  cfg.heads = 2;
  cfg.c2 = 4;
  cfg.c4 = 6;
  cfg.c8 = 8;
  cfg.seed = seed;
  ParamStore proto = init_matting_params(cfg);

  SynthSample sample = make_sample(16, 16, seed, 0);
  Rng wrng(seed ^ 0x2545F4914F6CDD1DULL);
  // Small readout: see make_block_problem.
  Tensor w = rnd({1, 16, 16}, wrng, -2e-4, 2e-4);

  // Random parameter draws rather than the training init: delta-initialized
  // branch kernels make every branch identical, parking the branch max on an
  // exact tie where finite differences see only one side of the kink.
  std::vector<std::string> names = proto.names();
  std::vector<Tensor> inputs;
  inputs.push_back(sample.image);
  for (const std::string& name : names)
    inputs.push_back(rnd(proto.get(name).shape(), wrng, -0.4, 0.4));

  Tensor trimap = sample.trimap;
  FdProblem p{"matting_net", inputs, [w, names, cfg, trimap](const std::vector<Tensor>& in) {
                ParamStore ps;
                for (std::size_t i = 0; i < names.size(); ++i) ps.add(names[i], in[i + 1]);
                return wsum(matting_forward(ps, cfg, in[0], trimap), w);
              }};
  return check_problem(p, tol, 1e-5, coords_per_tensor);
}

}  // namespace maga
