#pragma once

#include <string>
#include <vector>

#include "maga/tensor.hpp"

namespace maga {

// Matting error report over the unknown region of a trimap. Values carry the
// conventional scaling: SAD and Conn are sums divided by 1000, MSE and Grad
// follow the x1e3 / /1000 conventions below.
struct MetricReport {
  double sad = 0.0;
  double mse = 0.0;
  double grad = 0.0;
  double conn = 0.0;
  std::size_t n_unknown = 0;
  bool empty_mask = false;  // trimap had no unknown pixels; error fields are zero
};

// First-order Gaussian-derivative gradient magnitude, sigma 1.4, radius 5,
// L2-normalized separable kernels, mirrored borders. Input (H, W) in [0,1].
Tensor gradient_magnitude(const Tensor& alpha);

// Connectivity l-map: for thresholds 0.1..0.9 a pixel's level is the last
// threshold at which it still belonged to the largest 4-connected component
// of {pred >= theta} & {gt >= theta}. Pixels that never leave get 1.0.
std::vector<double> connectivity_lmap(const Tensor& pred, const Tensor& gt);

// pred/gt/trimap: (H, W) or (1, H, W), values in [0, 1]; trimap restricted to
// {0, 0.5, 1}. Unknown region is trimap == 0.5.
MetricReport evaluate(const Tensor& pred, const Tensor& gt, const Tensor& trimap);

struct EvalRow {
  std::string name;
  MetricReport report;
};

// report.csv: header, one row per sample, then a "mean" row over non-empty
// masks. Fixed 6-decimal formatting keeps reruns byte-identical.
void write_report_csv(const std::string& path, const std::vector<EvalRow>& rows);

// Same content, one JSON object per line.
void write_report_jsonl(const std::string& path, const std::vector<EvalRow>& rows);

}  // namespace maga
