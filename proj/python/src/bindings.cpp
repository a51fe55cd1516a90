#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <memory>
#include <sstream>

#include "maskpose/commands.hpp"
#include "maskpose/datasets.hpp"
#include "maskpose/metrics.hpp"
#include "maskpose/pipeline.hpp"

namespace py = pybind11;
using namespace maskpose;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Eigen::Quaterniond quaternion_from(const Array& wxyz) {
  if (wxyz.size() != 4) throw InvalidArgument("quaternion needs 4 values (w, x, y, z)");
  const double* q = wxyz.data();
  return {q[0], q[1], q[2], q[3]};
}

Eigen::Vector3d vector_from(const Array& xyz) {
  if (xyz.size() != 3) throw InvalidArgument("translation needs 3 values");
  return {xyz.data()[0], xyz.data()[1], xyz.data()[2]};
}

py::array_t<std::uint8_t> color_array(const ColorImage& img) {
  py::array_t<std::uint8_t> out({img.height(), img.width(), 3});
  auto v = out.mutable_unchecked<3>();
  for (int r = 0; r < img.height(); ++r) {
    for (int c = 0; c < img.width(); ++c) {
      v(r, c, 0) = img(r, c).r;
      v(r, c, 1) = img(r, c).g;
      v(r, c, 2) = img(r, c).b;
    }
  }
  return out;
}

template <typename T>
py::array_t<T> grid_array(const Grid<T>& g) {
  py::array_t<T> out({g.height(), g.width()});
  std::copy(g.data().begin(), g.data().end(), out.mutable_data());
  return out;
}

py::array_t<std::uint8_t> mask_array(const BinaryMask& m) { return grid_array(m.grid()); }

/// Loaded networks for estimating poses frame by frame.
class Estimator {
 public:
  Estimator(const std::filesystem::path& pose, const std::optional<std::filesystem::path>& seg,
            const std::optional<std::filesystem::path>& refiner)
      : pose_(std::make_unique<PoseNet>(PoseNet::load(pose).first)) {
    if (seg) seg_ = std::make_unique<SegNet>(SegNet::load(*seg));
    if (refiner) refiner_ = std::make_unique<RefinerNet>(RefinerNet::load(*refiner));
  }

  std::vector<FramePrediction> estimate(const RgbdFrame& frame, bool use_gt_masks, bool refine,
                                        std::uint64_t seed) const {
    return infer_frame({seg_.get(), pose_.get(), refiner_.get()}, frame, {use_gt_masks, refine, seed});
  }

 private:
  std::unique_ptr<PoseNet> pose_;
  std::unique_ptr<SegNet> seg_;
  std::unique_ptr<RefinerNet> refiner_;
};

RunConfig config_from(const std::string& json, std::optional<std::uint64_t> seed) {
  return run_config_from_json(nlohmann::json::parse(json), seed);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Mask-based 6D object pose estimation";

  static py::exception<Error> base(m, "Error", PyExc_RuntimeError);
  py::register_exception<InvalidArgument>(m, "InvalidArgument", base.ptr());
  py::register_exception<MissingPrerequisite>(m, "MissingPrerequisite", base.ptr());
  py::register_exception<ParseError>(m, "ParseError", base.ptr());
  py::register_exception<DataMismatch>(m, "DataMismatch", base.ptr());

  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def(py::init([](const Array& q, const Array& t) { return Pose::from_unnormalized(quaternion_from(q), vector_from(t)); }),
           py::arg("quaternion_wxyz"), py::arg("translation"))
      .def_static("from_matrix", &Pose::from_matrix, py::arg("rotation"), py::arg("translation"))
      .def_property_readonly("quaternion_wxyz",
                             [](const Pose& p) {
                               const auto& q = p.rotation();
                               return Eigen::Vector4d(q.w(), q.x(), q.y(), q.z());
                             })
      .def_property_readonly("translation", [](const Pose& p) { return Eigen::Vector3d(p.translation()); })
      .def_property_readonly("matrix", &Pose::rotation_matrix)
      .def("inverse", &Pose::inverse)
      .def("apply", [](const Pose& p, const Points3& x) { return apply_pose(p, x); }, py::arg("points"))
      .def("__matmul__", [](const Pose& a, const Pose& b) { return compose(a, b); })
      .def("__repr__", [](const Pose& p) {
        std::ostringstream s;
        const auto& q = p.rotation();
        s << "Pose(q=[" << q.w() << ", " << q.x() << ", " << q.y() << ", " << q.z() << "], t=["
          << p.translation().transpose() << "])";
        return s.str();
      });
  m.def("rotation_angle_between", &rotation_angle_between);

  py::class_<ObjectModel>(m, "ObjectModel")
      .def_readonly("object_id", &ObjectModel::object_id)
      .def_readonly("points", &ObjectModel::points)
      .def_readonly("diameter", &ObjectModel::diameter)
      .def_readonly("symmetric", &ObjectModel::symmetric);
  m.def("builtin_catalog", &builtin_catalog);

  m.def("add", &add, py::arg("model_points"), py::arg("gt"), py::arg("pred"));
  m.def("add_s", &add_s, py::arg("model_points"), py::arg("gt"), py::arg("pred"));
  m.def(
      "auc", [](const std::vector<double>& e, double t) { return auc(e, t); }, py::arg("errors"),
      py::arg("max_threshold") = kAucMaxThreshold);
  m.def(
      "pct_below", [](const std::vector<double>& e, double t) { return pct_below(e, t); }, py::arg("errors"),
      py::arg("threshold") = kGripperThreshold);

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def_readonly("fx", &CameraIntrinsics::fx)
      .def_readonly("fy", &CameraIntrinsics::fy)
      .def_readonly("cx", &CameraIntrinsics::cx)
      .def_readonly("cy", &CameraIntrinsics::cy)
      .def_readonly("width", &CameraIntrinsics::width)
      .def_readonly("height", &CameraIntrinsics::height);

  py::class_<Annotation>(m, "Annotation")
      .def_readonly("object_id", &Annotation::object_id)
      .def_readonly("pose", &Annotation::pose)
      .def_property_readonly("mask", [](const Annotation& a) { return mask_array(a.mask); });

  py::class_<RgbdFrame>(m, "RgbdFrame")
      .def_readonly("frame_id", &RgbdFrame::frame_id)
      .def_readonly("intrinsics", &RgbdFrame::intrinsics)
      .def_readonly("annotations", &RgbdFrame::annotations)
      .def_property_readonly("color", [](const RgbdFrame& f) { return color_array(f.color); })
      .def_property_readonly("depth", [](const RgbdFrame& f) { return grid_array(f.depth); })
      .def_property_readonly("labels", [](const RgbdFrame& f) { return grid_array(f.labels); });

  m.def(
      "_generate_scene",
      [](const std::string& config, std::uint64_t index) {
        return generate_scene(scene_config_from_json(nlohmann::json::parse(config)), index);
      },
      py::arg("config_json"), py::arg("index"));
  m.def("load_frame", &load_frame, py::arg("frame_dir"));
  m.def("write_frame", &write_frame, py::arg("frame"), py::arg("frame_dir"));

  py::class_<PosePrediction>(m, "PosePrediction")
      .def_readonly("object_id", &PosePrediction::object_id)
      .def_readonly("pose", &PosePrediction::pose)
      .def_readonly("confidence", &PosePrediction::confidence)
      .def_readonly("refined", &PosePrediction::refined);
  py::class_<FramePrediction>(m, "FramePrediction")
      .def_readonly("frame_id", &FramePrediction::frame_id)
      .def_readonly("prediction", &FramePrediction::prediction)
      .def_property_readonly("total_ms", [](const FramePrediction& p) { return p.latency.total_ms(); });

  py::class_<Estimator>(m, "Estimator")
      .def(py::init<std::filesystem::path, std::optional<std::filesystem::path>, std::optional<std::filesystem::path>>(),
           py::arg("pose_checkpoint"), py::arg("seg_checkpoint") = py::none(),
           py::arg("refiner_checkpoint") = py::none())
      .def("estimate", &Estimator::estimate, py::arg("frame"), py::arg("use_gt_masks") = false,
           py::arg("refine") = true, py::arg("seed") = 0, py::call_guard<py::gil_scoped_release>());

  m.def(
      "_run_config", [](const std::string& json, std::optional<std::uint64_t> seed) {
        return run_config_to_json(config_from(json, seed)).dump();
      });
  m.def(
      "_generate",
      [](const std::string& json, std::optional<std::uint64_t> seed, int count) {
        std::ostringstream log;
        const RunConfig c = config_from(json, seed);
        cmd_generate(c, count > 0 ? count : c.frame_count, log);
        return log.str();
      },
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "_train",
      [](const std::string& json, std::optional<std::uint64_t> seed, const std::string& stage) {
        std::ostringstream log;
        cmd_train(config_from(json, seed), stage, log);
        return log.str();
      },
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "_infer",
      [](const std::string& json, std::optional<std::uint64_t> seed, const std::string& split) {
        std::ostringstream log;
        const auto path = cmd_infer(config_from(json, seed), split, log);
        return std::make_pair(path, log.str());
      },
      py::call_guard<py::gil_scoped_release>());
  m.def(
      "_evaluate",
      [](const std::string& json, std::optional<std::uint64_t> seed, const std::filesystem::path& predictions,
         const std::string& split, const std::filesystem::path& out_dir) {
        std::ostringstream log;
        const MetricsReport r = cmd_eval(config_from(json, seed), predictions, split, out_dir, log);
        return report_to_json(r).dump();
      },
      py::call_guard<py::gil_scoped_release>());
}
