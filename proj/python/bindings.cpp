#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstring>
#include <utility>
#include <vector>

#include "flashdet/evaluation.hpp"
#include "flashdet/inference.hpp"
#include "flashdet/network.hpp"
#include "flashdet/parallel.hpp"
#include "flashdet/storage_io.hpp"
#include "flashdet/synth_data.hpp"
#include "flashdet/trainer.hpp"

namespace py = pybind11;
using namespace flashdet;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using ByteArray = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

Tensor3 tensor_from_array(const FloatArray& arr) {
  if (arr.ndim() == 2) {
    Tensor3 t(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)), 1);
    std::memcpy(t.data.data(), arr.data(), t.data.size() * sizeof(float));
    return t;
  }
  if (arr.ndim() != 3) throw std::invalid_argument("expected an (H, W, C) array");
  Tensor3 t(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)),
            static_cast<int>(arr.shape(2)));
  std::memcpy(t.data.data(), arr.data(), t.data.size() * sizeof(float));
  return t;
}

py::array array_from_tensor(const Tensor3& t) {
  py::array_t<float> arr({t.height, t.width, t.channels});
  std::memcpy(arr.mutable_data(), t.data.data(), t.data.size() * sizeof(float));
  return arr;
}

py::array array_from_plane(const Tensor3& t) {
  py::array_t<float> arr({t.height, t.width});
  std::memcpy(arr.mutable_data(), t.data.data(), t.data.size() * sizeof(float));
  return arr;
}

Mask mask_from_array(const ByteArray& arr) {
  if (arr.ndim() != 2) throw std::invalid_argument("expected an (H, W) mask array");
  Mask m(static_cast<int>(arr.shape(0)), static_cast<int>(arr.shape(1)));
  const std::uint8_t* p = arr.data();
  for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = p[i] ? 1 : 0;
  return m;
}

py::array array_from_mask(const Mask& m) {
  py::array_t<std::uint8_t> arr({m.height, m.width});
  std::memcpy(arr.mutable_data(), m.data.data(), m.data.size());
  return arr;
}

py::dict dict_from_output(const PatchOutput& po) {
  py::dict d;
  d["logits"] = py::make_tuple(po.logits[0], po.logits[1]);
  d["probs"] = py::make_tuple(po.probs[0], po.probs[1]);
  d["label"] = po.label;
  return d;
}

// LabelGrid plus the invocation tallies of the run that produced it.
struct GridResult {
  LabelGrid grid;
  std::int64_t conv_stack_invocations = 0;
  std::int64_t head_invocations = 0;
};

py::dict dict_from_metrics(const CoreMetrics& m) {
  py::dict d;
  d["sensitivity"] = m.sensitivity;
  d["precision"] = m.precision;
  d["f1"] = m.f1;
  d["specificity"] = m.specificity;
  d["auc"] = m.auc;
  d["degenerate_flags"] = m.degenerate_flags;
  return d;
}

ConfusionCounts counts_from_tuple(std::int64_t tp, std::int64_t fp, std::int64_t tn,
                                  std::int64_t fn) {
  ConfusionCounts c;
  c.tp = tp;
  c.fp = fp;
  c.tn = tn;
  c.fn = fn;
  return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Patch-CNN tumor detection: dense and feature-space sliding-window engines";

  py::class_<Model>(m, "Model")
      .def_property_readonly("parameter_count",
                             [](const Model& mod) { return mod.parameter_count(true); })
      .def_property_readonly("weight_count",
                             [](const Model& mod) { return mod.parameter_count(false); })
      .def("set_train", [](Model& mod, bool train) {
        mod.set_mode(train ? RunMode::kTrain : RunMode::kEval);
      })
      .def("reseed_dropout", &Model::reseed_dropout);

  py::class_<GridResult>(m, "LabelGrid")
      .def_property_readonly("origin",
                             [](const GridResult& g) {
                               return py::make_tuple(g.grid.origin_row, g.grid.origin_col);
                             })
      .def_property_readonly("stride", [](const GridResult& g) { return g.grid.stride; })
      .def_property_readonly("conv_stack_invocations",
                             [](const GridResult& g) { return g.conv_stack_invocations; })
      .def_property_readonly("head_invocations",
                             [](const GridResult& g) { return g.head_invocations; })
      .def_property_readonly("labels",
                             [](const GridResult& g) {
                               py::array_t<std::uint8_t> arr({g.grid.rows, g.grid.cols});
                               std::memcpy(arr.mutable_data(), g.grid.labels.data(),
                                           g.grid.labels.size());
                               return arr;
                             })
      .def_property_readonly("probs",
                             [](const GridResult& g) {
                               py::array_t<float> arr({g.grid.rows, g.grid.cols});
                               std::memcpy(arr.mutable_data(), g.grid.probs.data(),
                                           g.grid.probs.size() * sizeof(float));
                               return arr;
                             })
      .def("to_mask", [](const GridResult& g, int height, int width) {
        auto [mask, prob] = grid_to_mask(g.grid, height, width);
        return py::make_tuple(array_from_mask(mask), array_from_plane(prob));
      });

  m.def("build_model", &build_model, py::arg("seed"));
  m.def("save_model", &save_model, py::arg("model"), py::arg("path"));
  m.def("load_model", &load_model, py::arg("path"));

  m.def(
      "forward_patch",
      [](const Model& mod, const FloatArray& patch) {
        return dict_from_output(forward_patch(mod, tensor_from_array(patch)));
      },
      py::arg("model"), py::arg("patch"));

  m.def(
      "forward_features",
      [](const Model& mod, const FloatArray& patch) {
        return array_from_tensor(forward_features(mod, tensor_from_array(patch)));
      },
      py::arg("model"), py::arg("patch"));

  m.def(
      "head_classify",
      [](const Model& mod, const FloatArray& features) {
        return dict_from_output(head_classify(mod, tensor_from_array(features)));
      },
      py::arg("model"), py::arg("features"));

  m.def(
      "mirror_pad",
      [](const FloatArray& arr, int margin) {
        return array_from_tensor(mirror_pad(tensor_from_array(arr), margin));
      },
      py::arg("array"), py::arg("margin"));

  m.def("count_patches_dense", &count_patches_dense, py::arg("l"), py::arg("w") = 32);
  m.def("count_patches_flash", &count_patches_flash, py::arg("l"), py::arg("w") = 32);

  m.def(
      "dense_infer",
      [](const Model& mod, const FloatArray& image, int stride, int threads) {
        GridResult r;
        EngineStats stats;
        r.grid = dense_infer(mod, tensor_from_array(image), stride,
                             threads > 0 ? threads : default_thread_count(), &stats);
        r.conv_stack_invocations = stats.conv_stack_invocations;
        r.head_invocations = stats.head_invocations;
        return r;
      },
      py::arg("model"), py::arg("image"), py::arg("stride") = 1, py::arg("threads") = 1);

  m.def(
      "flash_infer",
      [](const Model& mod, const FloatArray& image, int threads) {
        GridResult r;
        EngineStats stats;
        r.grid = flash_infer(mod, tensor_from_array(image),
                             threads > 0 ? threads : default_thread_count(), &stats);
        r.conv_stack_invocations = stats.conv_stack_invocations;
        r.head_invocations = stats.head_invocations;
        return r;
      },
      py::arg("model"), py::arg("image"), py::arg("threads") = 1);

  m.def(
      "strided_infer",
      [](const Model& mod, const FloatArray& image, int stride, int threads) {
        auto [mask, prob] = strided_infer(mod, tensor_from_array(image), stride,
                                          threads > 0 ? threads : default_thread_count());
        return py::make_tuple(array_from_mask(mask), array_from_plane(prob));
      },
      py::arg("model"), py::arg("image"), py::arg("stride"), py::arg("threads") = 1);

  m.def(
      "generate_core",
      [](std::uint64_t seed, int side, double tumor_fraction, int blob_count,
         double blob_scale) {
        SynthSpec spec;
        spec.seed = seed;
        spec.side = side;
        spec.tumor_fraction = tumor_fraction;
        spec.blob_count = blob_count;
        spec.blob_scale = blob_scale;
        auto [image, mask] = generate_core(spec);
        return py::make_tuple(array_from_tensor(image), array_from_mask(mask));
      },
      py::arg("seed"), py::arg("side") = 512, py::arg("tumor_fraction") = 0.3,
      py::arg("blob_count") = 8, py::arg("blob_scale") = 96.0);

  m.def(
      "generate_training_regions",
      [](std::uint64_t seed, int tumor_count, int normal_count) {
        py::list out;
        for (const LabeledRegion& r : generate_training_regions(seed, tumor_count,
                                                                normal_count))
          out.append(py::make_tuple(array_from_tensor(r.image), r.label));
        return out;
      },
      py::arg("seed"), py::arg("tumor_count"), py::arg("normal_count"));

  m.def(
      "augment_region",
      [](const FloatArray& image, int label, int crops_per_angle, std::uint64_t seed) {
        LabeledRegion region;
        region.image = tensor_from_array(image);
        region.label = label;
        Rng rng(seed);
        py::list out;
        for (const Tensor3& p : augment_region(region, kAugmentAngles, crops_per_angle, rng))
          out.append(array_from_tensor(p));
        return out;
      },
      py::arg("image"), py::arg("label") = 0, py::arg("crops_per_angle") = 3,
      py::arg("seed") = 0);

  m.def(
      "train_patches",
      [](Model& mod, const py::list& patches, const std::vector<int>& labels, int epochs,
         int batch_size, float lr, float momentum, double val_fraction,
         std::uint64_t seed) {
        if (patches.size() != labels.size())
          throw std::invalid_argument("patches and labels differ in length");
        PatchDataset ds;
        ds.seed = seed;
        for (std::size_t i = 0; i < patches.size(); ++i) {
          ds.patches.push_back(tensor_from_array(patches[i].cast<FloatArray>()));
          ds.labels.push_back(static_cast<std::uint8_t>(labels[i] ? 1 : 0));
        }
        // Stratified split, same scheme the dataset builder uses.
        Rng rng(seed);
        std::array<std::vector<std::int64_t>, 2> by_class;
        for (std::size_t i = 0; i < ds.labels.size(); ++i)
          by_class[ds.labels[i]].push_back(static_cast<std::int64_t>(i));
        for (int c = 0; c < 2; ++c) {
          auto& idx = by_class[c];
          if (idx.size() < 2)
            throw std::invalid_argument("need at least two patches of each class");
          for (std::size_t i = idx.size() - 1; i > 0; --i)
            std::swap(idx[i], idx[static_cast<std::size_t>(
                              rng.uniform_int(static_cast<std::int64_t>(i) + 1))]);
          std::size_t n_val = static_cast<std::size_t>(
              std::lround(val_fraction * static_cast<double>(idx.size())));
          n_val = std::clamp<std::size_t>(n_val, 1, idx.size() - 1);
          ds.val_indices.insert(ds.val_indices.end(), idx.begin(), idx.begin() + n_val);
          ds.train_indices.insert(ds.train_indices.end(), idx.begin() + n_val, idx.end());
        }
        OptimizerState state = make_optimizer_state(mod, lr, momentum);
        py::list history;
        for (const EpochStats& e : train(mod, ds, epochs, batch_size, state, seed)) {
          py::dict row;
          row["epoch"] = e.epoch;
          row["mean_loss"] = e.mean_loss;
          row["train_acc"] = e.train_accuracy;
          row["val_acc"] = e.val_accuracy;
          history.append(row);
        }
        return history;
      },
      py::arg("model"), py::arg("patches"), py::arg("labels"), py::arg("epochs") = 10,
      py::arg("batch_size") = 128, py::arg("lr") = 0.002f, py::arg("momentum") = 0.9f,
      py::arg("val_fraction") = 0.1, py::arg("seed") = 0);

  m.def(
      "confusion",
      [](const ByteArray& pred, const ByteArray& gt) {
        const ConfusionCounts c = confusion(mask_from_array(pred), mask_from_array(gt));
        return py::make_tuple(c.tp, c.fp, c.tn, c.fn);
      },
      py::arg("pred"), py::arg("gt"));

  m.def("sensitivity", [](std::int64_t tp, std::int64_t fp, std::int64_t tn,
                          std::int64_t fn) { return sensitivity(counts_from_tuple(tp, fp, tn, fn)); });
  m.def("precision", [](std::int64_t tp, std::int64_t fp, std::int64_t tn,
                        std::int64_t fn) { return precision(counts_from_tuple(tp, fp, tn, fn)); });
  m.def("f1_score", [](std::int64_t tp, std::int64_t fp, std::int64_t tn,
                       std::int64_t fn) { return f1_score(counts_from_tuple(tp, fp, tn, fn)); });
  m.def("specificity", [](std::int64_t tp, std::int64_t fp, std::int64_t tn,
                          std::int64_t fn) { return specificity(counts_from_tuple(tp, fp, tn, fn)); });

  m.def(
      "roc_curve",
      [](const FloatArray& probs, const ByteArray& gt) {
        if (probs.size() != gt.size())
          throw std::invalid_argument("probs and ground truth differ in length");
        std::vector<float> p(probs.data(), probs.data() + probs.size());
        std::vector<std::uint8_t> g(gt.data(), gt.data() + gt.size());
        for (auto& v : g) v = v ? 1 : 0;
        const RocCurve c = roc_curve(std::span<const float>(p),
                                     std::span<const std::uint8_t>(g));
        py::array_t<double> fpr(static_cast<py::ssize_t>(c.points.size()));
        py::array_t<double> tpr(static_cast<py::ssize_t>(c.points.size()));
        py::array_t<double> thr(static_cast<py::ssize_t>(c.thresholds.size()));
        for (std::size_t i = 0; i < c.points.size(); ++i) {
          fpr.mutable_at(static_cast<py::ssize_t>(i)) = c.points[i].fpr;
          tpr.mutable_at(static_cast<py::ssize_t>(i)) = c.points[i].tpr;
          thr.mutable_at(static_cast<py::ssize_t>(i)) = c.thresholds[i];
        }
        return py::make_tuple(fpr, tpr, thr);
      },
      py::arg("probs"), py::arg("gt"));

  m.def(
      "roc_auc",
      [](const FloatArray& probs, const ByteArray& gt) {
        std::vector<float> p(probs.data(), probs.data() + probs.size());
        std::vector<std::uint8_t> g(gt.data(), gt.data() + gt.size());
        for (auto& v : g) v = v ? 1 : 0;
        return auc_trapezoid(
            roc_curve(std::span<const float>(p), std::span<const std::uint8_t>(g)));
      },
      py::arg("probs"), py::arg("gt"));

  m.def(
      "evaluate_core",
      [](const ByteArray& pred, const FloatArray& prob, const ByteArray& gt) {
        Tensor3 prob_map = tensor_from_array(prob);
        return dict_from_metrics(
            evaluate_core(mask_from_array(pred), prob_map, mask_from_array(gt)));
      },
      py::arg("pred"), py::arg("prob"), py::arg("gt"));

  m.attr("__version__") = "0.1.0";
}
