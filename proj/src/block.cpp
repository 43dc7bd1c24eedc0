#include "maga/block.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

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

// Identity depthwise kernel: center tap 1, rest 0.
Tensor delta_kernel(Shape shape) {
  std::vector<double> v(shape_numel(shape), 0.0);
  std::size_t kh = shape[1], kw = shape[2];
  for (std::size_t c = 0; c < shape[0]; ++c) v[(c * kh + kh / 2) * kw + kw / 2] = 1.0;
  return Tensor::from_data(std::move(shape), std::move(v));
}

}  // namespace

const char* branch_kind_name(BranchKind kind) {
  switch (kind) {
    case BranchKind::Row: return "row";
    case BranchKind::ColRow: return "colrow";
    case BranchKind::Col: return "col";
    case BranchKind::RowCol: return "rowcol";
  }
  throw std::invalid_argument("unknown branch kind");
}

std::vector<BranchKind> parse_branch_set(const std::string& text) {
  std::vector<BranchKind> out;
  std::stringstream ss(text);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok.erase(0, tok.find_first_not_of(" \t"));
    tok.erase(tok.find_last_not_of(" \t") + 1);
    if (tok.empty()) continue;
    BranchKind kind;
    if (tok == "row") kind = BranchKind::Row;
    else if (tok == "colrow") kind = BranchKind::ColRow;
    else if (tok == "col") kind = BranchKind::Col;
    else if (tok == "rowcol") kind = BranchKind::RowCol;
    else throw std::invalid_argument("unknown branch name: " + tok);
    if (std::find(out.begin(), out.end(), kind) != out.end())
      throw std::invalid_argument("duplicate branch name: " + tok);
    out.push_back(kind);
  }
  if (out.empty()) throw std::invalid_argument("branch set must not be empty");
  std::sort(out.begin(), out.end());
  return out;
}

std::string branch_set_name(const std::vector<BranchKind>& branches) {
  std::string s;
  for (BranchKind b : branches) {
    if (!s.empty()) s += ",";
    s += branch_kind_name(b);
  }
  return s;
}

void MagaConfig::validate() const {
  require(dim >= 2, "dim must be at least 2");
  require(heads >= 1 && dim % heads == 0, "heads must divide dim");
  require(kernel % 2 == 1 && kernel >= 3, "kernel must be odd and at least 3");
  require(reweight_kernel % 2 == 1, "reweight_kernel must be odd");
  require(!branches.empty(), "branch set must not be empty");
  for (std::size_t i = 1; i < branches.size(); ++i)
    require(branches[i - 1] < branches[i], "branches must be unique and in canonical order");
}

std::vector<Shape> branch_kernel_shapes(BranchKind kind, std::size_t channels, std::size_t k) {
  Shape row = {channels, 1, k}, col = {channels, k, 1};
  switch (kind) {
    case BranchKind::Row: return {row};
    case BranchKind::ColRow: return {col, row};  // k x 1 applied first
    case BranchKind::Col: return {col};
    case BranchKind::RowCol: return {row, col};  // 1 x k applied first
  }
  throw std::invalid_argument("unknown branch kind");
}

Tensor tetris_branch(const Tensor& qmap, BranchKind kind, const std::vector<Tensor>& kernels,
                     const ActiveSiteMask& mask) {
  // true = row kernel (1 x k), first-applied first
  std::vector<bool> row_order;
  switch (kind) {
    case BranchKind::Row: row_order = {true}; break;
    case BranchKind::ColRow: row_order = {false, true}; break;
    case BranchKind::Col: row_order = {false}; break;
    case BranchKind::RowCol: row_order = {true, false}; break;
  }
  require(kernels.size() == row_order.size(),
          std::string("branch ") + branch_kind_name(kind) + " expects " +
              std::to_string(row_order.size()) + " kernels");
  Tensor cur = qmap;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    const Tensor& w = kernels[i];
    require(w.rank() == 3 && w.extent(0) == qmap.extent(0), "branch kernel must be depthwise (C,kh,kw)");
    require(row_order[i] ? w.extent(1) == 1 : w.extent(2) == 1, "branch kernel orientation mismatch");
    cur = conv2d_sparse_depthwise(cur, w, mask);
  }
  return cur;
}

ReweightResult morpho_reweight(const std::vector<Tensor>& branch_maps, const Tensor& reweight_kernel) {
  require(!branch_maps.empty(), "morpho_reweight: no branch maps");
  std::size_t c = branch_maps[0].extent(0);
  for (const Tensor& m : branch_maps)
    require(m.rank() == 3 && m.shape() == branch_maps[0].shape(), "morpho_reweight: branch shape mismatch");

  std::vector<Tensor> normed;
  std::vector<Tensor> std_rows;
  for (const Tensor& m : branch_maps) {
    InstanceNormResult r = instance_norm(m);
    normed.push_back(r.y);
    std_rows.push_back(reshape(r.std, {1, c}));
  }
  Tensor w_n = reshape(concat_cols(std_rows), {branch_maps.size() * c});
  Tensor w_r = sigmoid(conv1d_channels(w_n, reweight_kernel));
  Tensor stacked = stack0(normed);  // (B, C, Hp, Wp)
  Tensor scaled = scale_channels(stacked, w_r);
  MaxResult mx = max_over_axis(scaled, 0);
  return ReweightResult{mx.values, w_r};
}

Tensor maga_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t heads) {
  require(q.rank() == 2 && k.rank() == 2 && v.rank() == 2, "attention expects (N, D) operands");
  std::size_t n = q.extent(0), d = q.extent(1);
  require(k.extent(0) == n && v.extent(0) == n, "attention: token count mismatch");
  require(k.extent(1) == d && v.extent(1) == d, "attention: width mismatch");
  require(heads >= 1 && d % heads == 0, "attention: heads must divide D");
  std::size_t dh = d / heads;
  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  std::vector<Tensor> head_outs;
  for (std::size_t h = 0; h < heads; ++h) {
    std::size_t c0 = h * dh, c1 = c0 + dh;
    Tensor qh = heads == 1 ? q : slice_cols(q, c0, c1);
    Tensor kh = heads == 1 ? k : slice_cols(k, c0, c1);
    Tensor vh = heads == 1 ? v : slice_cols(v, c0, c1);
    Tensor logits = scale(matmul(qh, transpose2d(kh)), inv_scale);
    Tensor attn = softmax_rows(logits);
    head_outs.push_back(matmul(attn, vh));
  }
  return heads == 1 ? head_outs[0] : concat_cols(head_outs);
}

void append_block_params(ParamStore& ps, const std::string& prefix, const MagaConfig& cfg,
                         bool use_maga, Rng& rng) {
  cfg.validate();
  std::size_t d = cfg.dim;
  ps.add(prefix + ".norm1.scale", Tensor::full({d}, 1.0));
  ps.add(prefix + ".norm1.shift", Tensor::zeros({d}));
  ps.add(prefix + ".attn.wq", gaussian_init({d, d}, 0.02, rng));
  ps.add(prefix + ".attn.wk", gaussian_init({d, d}, 0.02, rng));
  ps.add(prefix + ".attn.wv", gaussian_init({d, d}, 0.02, rng));
  ps.add(prefix + ".attn.wo", gaussian_init({d, d}, 0.02, rng));
  if (use_maga) {
    for (BranchKind kind : cfg.branches) {
      std::vector<Shape> shapes = branch_kernel_shapes(kind, d, cfg.kernel);
      for (std::size_t i = 0; i < shapes.size(); ++i)
        ps.add(prefix + ".maga." + branch_kind_name(kind) + ".k" + std::to_string(i),
               delta_kernel(shapes[i]));
    }
    ps.add(prefix + ".maga.reweight", Tensor::zeros({cfg.reweight_kernel}));
  }
  ps.add(prefix + ".norm2.scale", Tensor::full({d}, 1.0));
  ps.add(prefix + ".norm2.shift", Tensor::zeros({d}));
  ps.add(prefix + ".mlp.w1", gaussian_init({d, 4 * d}, 0.02, rng));
  ps.add(prefix + ".mlp.b1", Tensor::zeros({4 * d}));
  ps.add(prefix + ".mlp.w2", gaussian_init({4 * d, d}, 0.02, rng));
  ps.add(prefix + ".mlp.b2", Tensor::zeros({d}));
}

Tensor encoder_block(const Tensor& x, const ParamStore& ps, const std::string& prefix,
                     const MagaConfig& cfg, std::size_t hp, std::size_t wp, bool use_maga) {
  cfg.validate();
  require(x.rank() == 2 && x.extent(1) == cfg.dim, "encoder_block: token width mismatch");
  require(x.extent(0) == hp * wp, "encoder_block: token count must equal Hp*Wp");

  Tensor p = layer_norm(x, ps.get(prefix + ".norm1.scale"), ps.get(prefix + ".norm1.shift"));
  Tensor q = matmul(p, ps.get(prefix + ".attn.wq"));
  Tensor k = matmul(p, ps.get(prefix + ".attn.wk"));
  Tensor v = matmul(p, ps.get(prefix + ".attn.wv"));

  Tensor q_l = q;
  if (use_maga) {
    Tensor qmap = tokens_to_map(q, hp, wp);
    ActiveSiteMask mask = ActiveSiteMask::all_active(hp, wp);
    std::vector<Tensor> branch_maps;
    for (BranchKind kind : cfg.branches) {
      std::vector<Shape> shapes = branch_kernel_shapes(kind, cfg.dim, cfg.kernel);
      std::vector<Tensor> kernels;
      for (std::size_t i = 0; i < shapes.size(); ++i)
        kernels.push_back(ps.get(prefix + ".maga." + branch_kind_name(kind) + ".k" + std::to_string(i)));
      branch_maps.push_back(tetris_branch(qmap, kind, kernels, mask));
    }
    ReweightResult rw = morpho_reweight(branch_maps, ps.get(prefix + ".maga.reweight"));
    q_l = map_to_tokens(mul(rw.q_f, qmap));
  }

  Tensor attn = maga_attention(q_l, k, v, cfg.heads);
  Tensor x1 = add(x, matmul(attn, ps.get(prefix + ".attn.wo")));

  Tensor p2 = layer_norm(x1, ps.get(prefix + ".norm2.scale"), ps.get(prefix + ".norm2.shift"));
  Tensor h = gelu(add_bias_row(matmul(p2, ps.get(prefix + ".mlp.w1")), ps.get(prefix + ".mlp.b1")));
  Tensor m = add_bias_row(matmul(h, ps.get(prefix + ".mlp.w2")), ps.get(prefix + ".mlp.b2"));
  return add(x1, m);
}

}  // namespace maga
