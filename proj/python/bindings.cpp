#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "maskdiff/cli.hpp"
#include "maskdiff/dataset.hpp"
#include "maskdiff/diffusion.hpp"
#include "maskdiff/metrics.hpp"
#include "maskdiff/pairs.hpp"
#include "maskdiff/schedule.hpp"
#include "maskdiff/toyset.hpp"
#include "maskdiff/trainer.hpp"

namespace py = pybind11;
using namespace maskdiff;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<uint8_t, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const FloatArray& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor::from_data(std::move(shape), std::vector<float>(a.data(), a.data() + a.size()));
}

py::array_t<float> to_numpy(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<float> out(shape);
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

py::array_t<uint8_t> to_numpy(const GrayImage& image) {
  py::array_t<uint8_t> out({image.height, image.width});
  std::copy(image.pixels.begin(), image.pixels.end(), out.mutable_data());
  return out;
}

py::array_t<uint8_t> to_numpy(const AnnotationMap& a) {
  return to_numpy(GrayImage{a.width, a.height, a.labels});
}

template <typename T>
std::pair<int, int> image_dims(const py::array_t<T, py::array::c_style | py::array::forcecast>& a, const char* what) {
  if (a.ndim() != 2) throw std::invalid_argument(std::string(what) + ": expected a 2-D array");
  return {static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0))};
}

GrayImage to_image(const ByteArray& a) {
  const auto [w, h] = image_dims(a, "image");
  return GrayImage{w, h, std::vector<uint8_t>(a.data(), a.data() + a.size())};
}

AnnotationMap to_annotation(const ByteArray& a) {
  const auto [w, h] = image_dims(a, "annotation");
  return AnnotationMap{w, h, std::vector<uint8_t>(a.data(), a.data() + a.size())};
}

py::dict mask_dict(const ConditioningMask& m) {
  py::dict d;
  py::array_t<uint8_t> bits({m.height, m.width});
  std::copy(m.bits.begin(), m.bits.end(), bits.mutable_data());
  d["bits"] = bits;
  d["kind"] = m.kind == MaskKind::Background ? "background" : "feature_defect";
  d["defect_class"] = m.defect_class;
  return d;
}

FeatureSet to_features(const Eigen::MatrixXd& rows) { return FeatureSet{rows}; }

std::vector<TrainingPair> to_pairs(const std::vector<py::dict>& items) {
  std::vector<TrainingPair> out;
  for (const auto& d : items) {
    const auto image = d["image"].cast<FloatArray>();
    const auto mask = d["mask"].cast<FloatArray>();
    out.push_back({d.contains("id") ? d["id"].cast<std::string>() : std::to_string(out.size()),
                   d.contains("category") ? d["category"].cast<std::string>() : "",
                   {image.data(), image.data() + image.size()},
                   {mask.data(), mask.data() + mask.size()}});
  }
  return out;
}

py::list pairs_to_python(const std::vector<TrainingPair>& pairs, int size) {
  py::list out;
  for (const auto& p : pairs) {
    py::dict d;
    d["id"] = p.id;
    d["category"] = p.category;
    d["image"] = to_numpy(Tensor::from_data({size, size}, p.image));
    d["mask"] = to_numpy(Tensor::from_data({size, size}, p.mask));
    out.append(d);
  }
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mask-conditioned diffusion: schedule, denoiser, training, sampling, data and metrics.";

  py::class_<NoiseSchedule>(m, "NoiseSchedule")
      .def_readonly("steps", &NoiseSchedule::steps)
      .def_readonly("beta", &NoiseSchedule::beta)
      .def_readonly("alpha", &NoiseSchedule::alpha)
      .def_readonly("alpha_bar", &NoiseSchedule::alpha_bar)
      .def_readonly("posterior_variance", &NoiseSchedule::posterior_variance);
  m.def("cosine_schedule", &cosine_schedule, py::arg("steps"), py::arg("offset") = 0.008);
  m.def(
      "forward_marginal",
      [](const FloatArray& x0, int t, const FloatArray& eps, const NoiseSchedule& s) {
        return to_numpy(forward_marginal(to_tensor(x0), t, to_tensor(eps), s));
      },
      py::arg("x0"), py::arg("t"), py::arg("eps"), py::arg("schedule"));

  py::class_<UNetConfig>(m, "UNetConfig")
      .def(py::init<>())
      .def_readwrite("image_size", &UNetConfig::image_size)
      .def_readwrite("base_channels", &UNetConfig::base_channels)
      .def_readwrite("channel_multipliers", &UNetConfig::channel_multipliers)
      .def_readwrite("time_embed_dim", &UNetConfig::time_embed_dim)
      .def_readwrite("groups", &UNetConfig::groups)
      .def("validate", &UNetConfig::validate);

  py::class_<DenoiserParams>(m, "DenoiserParams")
      .def("__len__", &DenoiserParams::size)
      .def("parameter_count", &DenoiserParams::parameter_count)
      .def("names",
           [](const DenoiserParams& p) {
             std::vector<std::string> names;
             for (const auto& [name, t] : p) names.push_back(name);
             return names;
           })
      .def("__getitem__", [](const DenoiserParams& p, const std::string& name) { return to_numpy(p.at(name)); });
  m.def(
      "init_params",
      [](const UNetConfig& c, uint64_t seed) {
        RngStream rng(seed);
        return init_params(c, rng);
      },
      py::arg("config"), py::arg("seed") = 0);
  m.def(
      "denoise",
      [](const DenoiserParams& p, const FloatArray& x_and_mask, const std::vector<int>& timesteps,
         const UNetConfig& c) { return to_numpy(denoise(p, to_tensor(x_and_mask), timesteps, c)); },
      py::arg("params"), py::arg("x_and_mask"), py::arg("timesteps"), py::arg("config"));

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("accumulation_steps", &TrainConfig::accumulation_steps)
      .def_readwrite("ema_decay", &TrainConfig::ema_decay)
      .def_readwrite("patience_epochs", &TrainConfig::patience_epochs)
      .def_readwrite("max_epochs", &TrainConfig::max_epochs)
      .def_readwrite("max_steps", &TrainConfig::max_steps)
      .def_readwrite("seed", &TrainConfig::seed);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("params", &Checkpoint::params)
      .def_readonly("ema_params", &Checkpoint::ema_params)
      .def_readonly("unet", &Checkpoint::unet)
      .def_readonly("train", &Checkpoint::train)
      .def_readonly("diffusion_steps", &Checkpoint::diffusion_steps)
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_readonly("best_val_loss", &Checkpoint::best_val_loss)
      .def_readonly("val_history", &Checkpoint::val_history)
      .def_readonly("train_history", &Checkpoint::train_history)
      .def_readonly("category", &Checkpoint::category)
      .def("id", &Checkpoint::id)
      .def("save", [](const Checkpoint& c, const std::string& dir) { save_checkpoint(c, dir); });
  m.def("load_checkpoint", &load_checkpoint, py::arg("dir"));

  py::class_<TrainResult>(m, "TrainResult")
      .def_readonly("best", &TrainResult::best)
      .def_readonly("epochs_run", &TrainResult::epochs_run)
      .def_readonly("optimizer_steps", &TrainResult::optimizer_steps)
      .def_readonly("aborted", &TrainResult::aborted)
      .def_readonly("abort_reason", &TrainResult::abort_reason)
      .def_readonly("train_history", &TrainResult::train_history)
      .def_readonly("val_history", &TrainResult::val_history);
  m.def(
      "train",
      [](const std::vector<py::dict>& train_set, const std::vector<py::dict>& val_set, const UNetConfig& unet,
         const TrainConfig& config, int diffusion_steps) {
        const auto tr = to_pairs(train_set), va = to_pairs(val_set);
        py::gil_scoped_release release;
        TrainResult r = train(tr, va, unet, config, cosine_schedule(diffusion_steps));
        r.best.diffusion_steps = diffusion_steps;
        return r;
      },
      py::arg("train_set"), py::arg("val_set"), py::arg("unet"), py::arg("config"), py::arg("diffusion_steps"),
      "Pairs are dicts with float 'image' in [-1, 1] and binary 'mask', both image_size x image_size.");
  m.def(
      "sample",
      [](const Checkpoint& c, const FloatArray& mask, int n, uint64_t seed, bool use_ema, bool clip_denoised) {
        const auto [w, h] = image_dims(mask, "mask");
        const Tensor mt = Tensor::from_data({1, 1, h, w}, std::vector<float>(mask.data(), mask.data() + mask.size()));
        std::vector<Tensor> out;
        {
          py::gil_scoped_release release;
          const NoisePredictor predictor = make_predictor(use_ema ? c.ema_params : c.params, c.unet);
          out = sample_batch(predictor, {mt}, n, cosine_schedule(c.diffusion_steps), RngStream(seed), 16,
                             SamplerOptions{clip_denoised});
        }
        py::array_t<float> arr({static_cast<py::ssize_t>(n), static_cast<py::ssize_t>(h), static_cast<py::ssize_t>(w)});
        float* dst = arr.mutable_data();
        for (const auto& t : out) dst = std::copy(t.data().begin(), t.data().end(), dst);
        return arr;
      },
      py::arg("checkpoint"), py::arg("mask"), py::arg("n") = 1, py::arg("seed") = 0, py::arg("use_ema") = true,
      py::arg("clip_denoised") = true);

  m.def(
      "toyset",
      [](int n, uint64_t seed, int size) {
        py::list out;
        for (const auto& s : generate_toyset(n, seed, ClassCatalog::standard(), size)) {
          py::dict d;
          d["id"] = s.id;
          d["category"] = to_string(s.category);
          d["image"] = to_numpy(s.image);
          d["annotation"] = to_numpy(s.annotation);
          out.append(d);
        }
        return out;
      },
      py::arg("n"), py::arg("seed") = 0, py::arg("size") = kToyImageSize);
  m.def("class_names", [] {
    const ClassCatalog catalog = ClassCatalog::standard();
    std::vector<std::string> names;
    for (const auto& e : catalog.entries()) names.push_back(e.name);
    return names;
  });
  m.def(
      "categorize", [](const ByteArray& a) { return to_string(categorize(to_annotation(a), ClassCatalog::standard())); },
      py::arg("annotation"));
  m.def(
      "background_mask",
      [](const ByteArray& a) { return mask_dict(background_mask(to_annotation(a), ClassCatalog::standard())); },
      py::arg("annotation"));
  m.def(
      "feature_defect_masks",
      [](const ByteArray& a) {
        py::list out;
        for (const auto& mk : feature_defect_masks(to_annotation(a), ClassCatalog::standard())) out.append(mask_dict(mk));
        return out;
      },
      py::arg("annotation"));
  m.def(
      "make_pairs",
      [](const std::string& id, const std::string& category, const ByteArray& image, const ByteArray& annotation,
         int resolution, const std::string& selection) {
        return pairs_to_python(make_pairs(id, category, to_image(image), to_annotation(annotation),
                                          ClassCatalog::standard(), resolution, parse_mask_selection(selection)),
                               resolution);
      },
      py::arg("id"), py::arg("category"), py::arg("image"), py::arg("annotation"), py::arg("resolution"),
      py::arg("selection") = "all");

  m.def(
      "fid", [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return fid(to_features(a), to_features(b)); },
      py::arg("a"), py::arg("b"));
  m.def("mmd2_unbiased", &mmd2_unbiased, py::arg("x"), py::arg("y"));
  m.def(
      "kid",
      [](const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, int subset_size, int n_subsets, uint64_t seed) {
        RngStream rng(seed);
        const KidResult r = kid(to_features(a), to_features(b), subset_size, n_subsets, rng);
        return py::make_tuple(r.mean, r.std);
      },
      py::arg("a"), py::arg("b"), py::arg("subset_size"), py::arg("n_subsets") = 100, py::arg("seed") = 0);
  m.def(
      "auroc", [](const std::vector<double>& s, const std::vector<int>& y) { return auroc(s, y); }, py::arg("scores"),
      py::arg("labels"));
  m.def(
      "average_precision",
      [](const std::vector<double>& s, const std::vector<int>& y) { return average_precision(s, y); },
      py::arg("scores"), py::arg("labels"));

  m.def(
      "run_cli",
      [](const std::vector<std::string>& args) {
        std::ostringstream out, err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"), "Runs one command line; returns (exit code, stdout, stderr).");
}
