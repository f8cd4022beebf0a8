// Python bindings for the main operations: training, transplanting, grids,
// reporting, checkpoints and a few numeric building blocks.
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "rtl/agent.hpp"
#include "rtl/checkpoint.hpp"
#include "rtl/error.hpp"
#include "rtl/harness.hpp"
#include "rtl/surgery.hpp"

namespace py = pybind11;
using namespace rtl;

namespace {

harness::TrainConfig train_config(std::size_t eval_interval, std::size_t eval_episodes) {
    harness::TrainConfig c;
    c.eval_interval = eval_interval;
    c.eval_episodes = eval_episodes;
    return c;
}

py::list curve_rows(const harness::LearningCurve& curve) {
    py::list rows;
    for (const auto& r : curve) {
        py::dict d;
        d["env_steps"] = r.env_steps;
        d["eval_return_mean"] = r.eval_return_mean;
        d["eval_return_std"] = r.eval_return_std;
        d["wall_clock_seconds"] = r.wall_clock_seconds;
        rows.append(d);
    }
    return rows;
}

py::dict transplant_dict(const surgery::TransplantReport& rep) {
    py::dict d;
    d["k"] = rep.k;
    d["pass"] = rep.pass;
    py::list layers;
    for (const auto& l : rep.layers) {
        py::dict ld;
        ld["name"] = l.name;
        ld["depth"] = l.depth;
        ld["equal_to_parent"] = l.equal;
        layers.append(ld);
    }
    d["layers"] = layers;
    return d;
}

py::dict record_dict(const harness::TrialRecord& r) {
    py::dict d;
    d["trial_id"] = r.trial_id;
    d["role"] = r.role;
    d["parent_env"] = r.parent_env;
    d["child_env"] = r.child_env;
    d["k"] = r.k ? py::cast(*r.k) : py::none();
    d["mode"] = r.mode;
    d["run"] = r.run;
    d["seed"] = r.seed;
    d["steps"] = r.steps;
    d["status"] = r.status;
    d["checkpoint"] = r.checkpoint;
    d["curve"] = curve_rows(r.curve);
    d["transplant_report"] = r.transplant ? py::object(transplant_dict(*r.transplant)) : py::none();
    d["freeze_audit"] = r.freeze_audit ? py::cast(*r.freeze_audit) : py::none();
    return d;
}

py::dict checkpoint_dict(const surgery::Checkpoint& c) {
    py::dict d;
    d["format_version"] = c.format_version;
    d["metadata"] = c.metadata;
    py::dict tensors;
    for (const auto& [name, t] : c.tensors) {
        py::array_t<float> a(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
        auto* dst = a.mutable_data();
        for (std::size_t i = 0; i < t.size(); ++i) dst[i] = static_cast<float>(t[i]);
        tensors[py::str(name)] = a;
    }
    d["tensors"] = tensors;
    return d;
}

}  // namespace

PYBIND11_MODULE(_rtl, m) {
    m.doc() = "Layer-transplant transfer experiments for Rainbow-style agents";

    auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
    py::register_exception<StateError>(m, "StateError", base.ptr());
    py::register_exception<FormatError>(m, "FormatError", base.ptr());
    py::register_exception<VersionError>(m, "VersionError", base.ptr());
    py::register_exception<ArchitectureMismatch>(m, "ArchitectureMismatch", base.ptr());
    py::register_exception<ConfigError>(m, "ConfigError", base.ptr());

    m.attr("CURVE_HEADER") = harness::kCurveHeader;
    m.attr("PLOT_HEADER") = harness::kPlotHeader;
    m.attr("SUMMARY_HEADER") = harness::kSummaryHeader;

    m.def("env_names", &env::env_names, "Names of the built-in environments");

    m.def(
        "train_parent",
        [](const std::string& env, std::size_t steps, std::uint64_t seed, const std::filesystem::path& out,
           std::size_t eval_interval, std::size_t eval_episodes) {
            harness::ParentResult res = [&] {
                py::gil_scoped_release release;
                return harness::train_parent(env, steps, seed, out, train_config(eval_interval, eval_episodes));
            }();
            return record_dict(res.record);
        },
        py::arg("env"), py::arg("steps"), py::arg("seed"), py::arg("out"), py::arg("eval_interval") = 5000,
        py::arg("eval_episodes") = 10, "Train a scratch agent; writes <out>, <stem>.csv and <stem>.json");

    m.def(
        "transplant",
        [](const std::filesystem::path& parent, std::size_t k, const std::string& mode, std::uint64_t seed,
           const std::filesystem::path& out) {
            const auto rep = harness::transplant_checkpoint(parent, k, surgery::parse_mode(mode), seed, out);
            return transplant_dict(rep);
        },
        py::arg("parent"), py::arg("k"), py::arg("mode"), py::arg("seed"), py::arg("out"),
        "Write a child checkpoint holding the parent's first k depth positions; returns the audit");

    m.def(
        "run_child",
        [](const std::filesystem::path& parent, const std::string& env, std::size_t k, const std::string& mode,
           std::size_t steps, std::uint64_t seed, const std::filesystem::path& out_dir, std::size_t run,
           std::size_t eval_interval, std::size_t eval_episodes) {
            const harness::ChildOptions opt{env, k, surgery::parse_mode(mode), seed, steps, run};
            harness::TrialRecord rec = [&] {
                py::gil_scoped_release release;
                return harness::run_child(parent, opt, out_dir, train_config(eval_interval, eval_episodes));
            }();
            return record_dict(rec);
        },
        py::arg("parent"), py::arg("env"), py::arg("k"), py::arg("mode"), py::arg("steps"), py::arg("seed"),
        py::arg("out_dir"), py::arg("run") = 0, py::arg("eval_interval") = 5000, py::arg("eval_episodes") = 10,
        "Transplant from a parent checkpoint and train the child");

    m.def(
        "plan_grid",
        [](const std::string& config_text) {
            py::list out;
            for (const auto& t : harness::plan_grid(harness::parse_grid_config(config_text))) out.append(t.trial_id);
            return out;
        },
        py::arg("config_text") = "", "Trial ids a grid config would run, parents first");

    m.def(
        "run_grid",
        [](const std::filesystem::path& config, const std::filesystem::path& out_dir, std::size_t workers) {
            const auto grid = harness::load_grid_config(config);
            harness::GridSummary s = [&] {
                py::gil_scoped_release release;
                return harness::run_grid(grid, out_dir, workers);
            }();
            py::dict d;
            d["planned"] = s.planned;
            d["executed"] = s.executed;
            d["skipped"] = s.skipped;
            d["failed"] = s.failed;
            d["failures"] = s.failures;
            return d;
        },
        py::arg("config"), py::arg("out_dir"), py::arg("workers") = 1, "Run or resume a grid");

    m.def(
        "report",
        [](const std::filesystem::path& in_dir, const std::filesystem::path& out) {
            const auto rep = harness::report(in_dir, out);
            py::list series;
            for (const auto& s : rep.series) {
                py::dict d;
                d["child_env"] = s.child_env;
                d["series"] = s.series;
                d["parent_env"] = s.parent_env;
                d["k"] = s.k ? py::cast(*s.k) : py::none();
                d["mode"] = s.mode;
                d["runs"] = s.runs;
                d["final_env_steps"] = s.final_env_steps;
                d["final_mean"] = s.final_mean;
                d["final_std"] = s.final_std;
                d["steps_to_threshold"] = s.steps_to_threshold ? py::cast(*s.steps_to_threshold) : py::none();
                series.append(d);
            }
            py::dict d;
            d["series"] = series;
            d["plot_files"] = rep.plot_files;
            return d;
        },
        py::arg("in_dir"), py::arg("out"), "Aggregate learning curves into summary and plot CSVs");

    m.def(
        "load_checkpoint",
        [](const std::filesystem::path& path, std::optional<std::string> expected_hash) {
            return checkpoint_dict(surgery::load(path, expected_hash));
        },
        py::arg("path"), py::arg("expected_hash") = py::none(),
        "Read a checkpoint: metadata plus float32 tensors keyed by name");

    m.def(
        "architecture_hash", [] { return nn::Network(agent::agent_network_spec({})).architecture_hash(); },
        "Hash of the default agent architecture");

    m.def(
        "categorical_project",
        [](const std::vector<double>& row, double reward, double discount, double v_min, double v_max) {
            return agent::categorical_project(row, reward, discount, agent::AtomSupport(row.size(), v_min, v_max));
        },
        py::arg("next_row"), py::arg("reward"), py::arg("discount"), py::arg("v_min") = -10.0,
        py::arg("v_max") = 10.0, "Project a shifted categorical distribution back onto its support");

    m.def("child_trial_id",
          [](std::size_t k, const std::string& mode, const std::string& parent_env, const std::string& child_env,
             std::size_t run) { return harness::child_trial_id(k, surgery::parse_mode(mode), parent_env, child_env, run); },
          py::arg("k"), py::arg("mode"), py::arg("parent_env"), py::arg("child_env"), py::arg("run") = 0);
    m.def("parent_trial_id", &harness::parent_trial_id, py::arg("env"), py::arg("run") = 0);
}
