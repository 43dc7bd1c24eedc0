#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "maga/block.hpp"
#include "maga/config.hpp"
#include "maga/metrics.hpp"
#include "maga/net.hpp"
#include "maga/ops.hpp"
#include "maga/synth.hpp"
#include "maga/tensor_io.hpp"

namespace py = pybind11;
using namespace maga;

namespace {

Tensor to_tensor(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape;
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape.push_back(static_cast<std::size_t>(a.shape(i)));
  std::vector<double> data(a.data(), a.data() + a.size());
  return Tensor::from_data(shape, std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> a(shape);
  std::copy(t.ptr(), t.ptr() + t.numel(), a.mutable_data());
  return a;
}

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

NetConfig config_from_dict(const py::dict& d) {
  KvConfig kv;
  NetConfig defaults;
  net_config_to_kv(defaults, kv);
  for (const auto& item : d)
    kv.set(py::cast<std::string>(item.first), py::cast<std::string>(py::str(item.second)));
  return net_config_from_kv(kv);
}

// Thin training/inference handle over ParamStore + NetConfig.
class MattingNet {
 public:
  explicit MattingNet(const py::dict& config)
      : cfg_(config_from_dict(config)), params_(init_matting_params(cfg_)) {}
  MattingNet(NetConfig cfg, ParamStore params) : cfg_(cfg), params_(std::move(params)) {}

  py::array_t<double> forward(const Arr& image, const Arr& trimap) const {
    return to_array(matting_forward(params_, cfg_, to_tensor(image), to_tensor(trimap)));
  }

  double train_step(const py::list& batch, double lr, double weight_decay) {
    std::vector<SynthSample> samples;
    for (const auto& item : batch) {
      py::dict d = py::cast<py::dict>(item);
      SynthSample s;
      s.image = to_tensor(py::cast<Arr>(d["image"]));
      s.alpha = to_tensor(py::cast<Arr>(d["alpha"]));
      s.trimap = to_tensor(py::cast<Arr>(d["trimap"]));
      s.fg = d.contains("fg") ? to_tensor(py::cast<Arr>(d["fg"])) : s.image;
      s.bg = d.contains("bg") ? to_tensor(py::cast<Arr>(d["bg"])) : s.image;
      samples.push_back(std::move(s));
    }
    opt_.config.lr = lr;
    opt_.config.weight_decay = weight_decay;
    return maga::train_step(params_, cfg_, samples, opt_);
  }

  std::vector<std::string> param_names() const { return params_.names(); }
  py::array_t<double> get_param(const std::string& name) const { return to_array(params_.get(name)); }

  void save(const std::string& dir) const {
    KvConfig kv;
    net_config_to_kv(cfg_, kv);
    save_checkpoint(dir, params_, kv.snapshot());
  }

  static MattingNet load(const std::string& dir) {
    Checkpoint ck = load_checkpoint(dir);
    return MattingNet(net_config_from_kv(KvConfig::from_text(ck.config_text)), std::move(ck.params));
  }

 private:
  NetConfig cfg_;
  ParamStore params_;
  AdamState opt_;
};

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "morpho-aware global attention matting core";

  m.def(
      "synth_pair",
      [](std::size_t h, std::size_t w, std::uint64_t seed, std::uint64_t index) {
        SynthSample s = make_sample(h, w, seed, index);
        py::dict d;
        d["image"] = to_array(s.image);
        d["alpha"] = to_array(s.alpha);
        d["trimap"] = to_array(s.trimap);
        d["fg"] = to_array(s.fg);
        d["bg"] = to_array(s.bg);
        return d;
      },
      py::arg("height"), py::arg("width"), py::arg("seed"), py::arg("index") = 0);

  m.def(
      "evaluate",
      [](const Arr& pred, const Arr& gt, const Arr& trimap) {
        MetricReport r = evaluate(to_tensor(pred), to_tensor(gt), to_tensor(trimap));
        py::dict d;
        d["sad"] = r.sad;
        d["mse"] = r.mse;
        d["grad"] = r.grad;
        d["conn"] = r.conn;
        d["n_unknown"] = r.n_unknown;
        d["empty_mask"] = r.empty_mask;
        return d;
      },
      py::arg("pred"), py::arg("gt"), py::arg("trimap"));

  m.def("matmul", [](const Arr& a, const Arr& b) { return to_array(matmul(to_tensor(a), to_tensor(b))); });
  m.def("softmax_rows", [](const Arr& x) { return to_array(softmax_rows(to_tensor(x))); });
  m.def("gelu", [](const Arr& x) { return to_array(gelu(to_tensor(x))); });
  m.def(
      "conv2d_sparse",
      [](const Arr& x, const Arr& w,
         const py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>& mask) {
        if (mask.ndim() != 2) throw std::invalid_argument("mask must be 2-d");
        std::vector<std::uint8_t> active(mask.data(), mask.data() + mask.size());
        ActiveSiteMask m2(static_cast<std::size_t>(mask.shape(0)),
                          static_cast<std::size_t>(mask.shape(1)), std::move(active));
        return to_array(conv2d_sparse(to_tensor(x), to_tensor(w), m2));
      },
      py::arg("x"), py::arg("weight"), py::arg("mask"));
  m.def("instance_norm", [](const Arr& x) { return to_array(instance_norm(to_tensor(x)).y); });
  m.def("max_over_axis", [](const Arr& x, std::size_t axis) {
    return to_array(max_over_axis(to_tensor(x), axis).values);
  });
  m.def("maga_attention", [](const Arr& q, const Arr& k, const Arr& v, std::size_t heads) {
    return to_array(maga_attention(to_tensor(q), to_tensor(k), to_tensor(v), heads));
  });

  py::class_<MattingNet>(m, "MattingNet")
      .def(py::init<const py::dict&>(), py::arg("config"))
      .def("forward", &MattingNet::forward, py::arg("image"), py::arg("trimap"))
      .def("train_step", &MattingNet::train_step, py::arg("batch"), py::arg("lr") = 1e-3,
           py::arg("weight_decay") = 0.1)
      .def("param_names", &MattingNet::param_names)
      .def("get_param", &MattingNet::get_param, py::arg("name"))
      .def("save", &MattingNet::save, py::arg("dir"))
      .def_static("load", &MattingNet::load, py::arg("dir"));
}
