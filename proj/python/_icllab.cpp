// Copyright 2026 The icllab Authors
// SPDX-License-Identifier: Apache-2.0

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "icllab/advtrain.hpp"
#include "icllab/attack.hpp"
#include "icllab/errors.hpp"
#include "icllab/evalx.hpp"
#include "icllab/gpt.hpp"
#include "icllab/lsa.hpp"
#include "icllab/runner/checkpoint.hpp"
#include "icllab/runner/run.hpp"
#include "icllab/taskgen.hpp"

namespace py = pybind11;
using namespace icllab;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(const ndiff::Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  Array a(shape);
  std::copy(t.data().begin(), t.data().end(), a.mutable_data());
  return a;
}

Array to_array(const Vec& v) {
  Array a(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())});
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

ndiff::Tensor to_tensor(const Array& a) {
  ndiff::Shape shape(a.shape(), a.shape() + a.ndim());
  ndiff::Tensor t = ndiff::Tensor::zeros(shape);
  std::copy(a.data(), a.data() + a.size(), t.data().begin());
  return t;
}

Vec to_vec(const Array& a) {
  if (a.ndim() != 1) throw ShapeError("expected a 1-D array");
  return Vec(a.data(), a.data() + a.size());
}

Prompt to_prompt(const Array& xs, const Array& ys, const Array& x_query) {
  if (xs.ndim() != 2) throw ShapeError("xs must be (m, d)");
  const auto m = static_cast<std::size_t>(xs.shape(0)), d = static_cast<std::size_t>(xs.shape(1));
  Prompt p;
  p.ys = to_vec(ys);
  p.x_query = to_vec(x_query);
  if (p.ys.size() != m || p.x_query.size() != d) throw ShapeError("ys must be (m,), x_query (d,)");
  for (std::size_t i = 0; i < m; ++i) p.xs.emplace_back(xs.data() + i * d, xs.data() + (i + 1) * d);
  return p;
}

Array xs_array(const Prompt& p) {
  Array a({static_cast<py::ssize_t>(p.m()), static_cast<py::ssize_t>(p.d())});
  double* out = a.mutable_data();
  for (const auto& x : p.xs) out = std::copy(x.begin(), x.end(), out);
  return a;
}

py::dict task_dict(const RegressionTask& t) {
  py::dict d;
  d["w"] = to_array(t.w);
  d["xs"] = xs_array(t.prompt);
  d["ys"] = to_array(t.prompt.ys);
  d["x_query"] = to_array(t.prompt.x_query);
  d["y_query"] = t.y_query;
  return d;
}

RegressionTask dict_task(const py::dict& d) {
  RegressionTask t;
  t.w = to_vec(d["w"].cast<Array>());
  t.prompt = to_prompt(d["xs"].cast<Array>(), d["ys"].cast<Array>(), d["x_query"].cast<Array>());
  t.y_query = d["y_query"].cast<double>();
  return t;
}

py::dict record_dict(const evalx::EvalRecord& r) {
  py::dict d;
  d["model_id"] = r.model_id;
  d["seed"] = r.seed;
  d["alpha"] = r.alpha;
  d["attack_type"] = r.attack_type;
  d["k"] = r.k;
  d["prompt_idx"] = r.prompt_idx;
  d["gte"] = r.gte;
  d["tae"] = r.tae;
  d["clean_pred"] = r.clean_pred;
  d["attacked_pred"] = r.attacked_pred;
  d["y_bad"] = r.y_bad;
  d["y_clean"] = r.y_clean;
  return d;
}

}  // namespace

PYBIND11_MODULE(_icllab, m) {
  m.doc() = "Hijacking attacks on in-context linear regression: C++ core bindings";
  m.attr("__version__") = ICLLAB_VERSION;

  py::register_exception<Error>(m, "IcllabError", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);

  m.def("sample_task", [](std::uint64_t seed, std::uint64_t index, std::size_t d,
                          std::size_t m) { return task_dict(sample_task_at(seed, index, d, m)); },
        py::arg("seed"), py::arg("index") = 0, py::arg("d") = 5, py::arg("m") = 10);
  m.def("eval_task", [](std::uint64_t seed, std::size_t idx, std::size_t d,
                        std::size_t m) { return task_dict(evalx::eval_task(seed, idx, d, m)); },
        py::arg("seed"), py::arg("idx"), py::arg("d") = 5, py::arg("m") = 10);
  m.def("alpha_target", [](const py::dict& task, double alpha, std::uint64_t seed) {
        return make_target(dict_task(task), AlphaInterp{alpha, {}}, seed).y_bad;
      }, py::arg("task"), py::arg("alpha"), py::arg("seed") = 0);

  py::class_<Predictor>(m, "Predictor")
      .def_property_readonly("id", &Predictor::id)
      .def("predict", [](const Predictor& p, const Array& xs, const Array& ys, const Array& xq) {
        return p.predict(to_prompt(xs, ys, xq));
      }, py::arg("xs"), py::arg("ys"), py::arg("x_query"));

  py::class_<lsa::LsaPredictor, Predictor>(m, "LsaModel")
      .def(py::init([](const Array& w_pv, const Array& w_kq, std::string id) {
             return lsa::LsaPredictor(lsa::LsaParams{to_tensor(w_pv), to_tensor(w_kq)}, std::move(id));
           }),
           py::arg("w_pv"), py::arg("w_kq"), py::arg("id") = "lsa")
      .def_static("structured", [](std::size_t d, double scale) {
        return lsa::LsaPredictor(lsa::LsaParams::structured_init(d, scale));
      }, py::arg("d"), py::arg("scale") = 1.0)
      .def_property_readonly("w_pv", [](const lsa::LsaPredictor& p) { return to_array(p.params().w_pv); })
      .def_property_readonly("w_kq", [](const lsa::LsaPredictor& p) { return to_array(p.params().w_kq); })
      .def("structure_ratio", [](const lsa::LsaPredictor& p) {
        return lsa::extract_attack_matrix(p.params()).off_block_norm_ratio;
      })
      .def("closed_form_attack", [](const lsa::LsaPredictor& p, const Array& xs, const Array& ys, const Array& xq,
                                    double y_bad, const std::string& type, std::size_t index) {
        const Prompt prompt = to_prompt(xs, ys, xq);
        lsa::ClosedFormAttack a;
        if (type == "x") a = lsa::closed_form_x_attack(prompt, p.params(), y_bad, index, prompt.ys.at(index));
        else if (type == "y") a = lsa::closed_form_y_attack(prompt, p.params(), y_bad, index);
        else if (type == "z") a = lsa::closed_form_z_attack(prompt, p.params(), y_bad, index);
        else throw std::invalid_argument("type must be x, y or z");
        const Prompt out = lsa::apply_attack(prompt, a);
        return py::make_tuple(xs_array(out), to_array(out.ys));
      }, py::arg("xs"), py::arg("ys"), py::arg("x_query"), py::arg("y_bad"), py::arg("type") = "y",
         py::arg("index") = 0);

  m.def("train_lsa", [](std::size_t d, std::size_t n, std::size_t batch, std::size_t steps, double lr,
                        std::uint64_t seed) {
        lsa::TrainLsaConfig c;
        c.d = d;
        c.n = n;
        c.batch = batch;
        c.steps = steps;
        c.lr = lr;
        c.seed = seed;
        c.log_every = std::max<std::size_t>(1, steps / 10);
        lsa::LsaTrainResult res;
        {
          py::gil_scoped_release release;
          res = lsa::train_lsa(c);
        }
        std::vector<std::pair<std::size_t, double>> trace;
        for (const auto& t : res.trace) trace.emplace_back(t.step, t.loss);
        return py::make_tuple(lsa::LsaPredictor(std::move(res.params)), trace);
      }, py::arg("d") = 5, py::arg("n") = 10, py::arg("batch") = 256, py::arg("steps") = 1000, py::arg("lr") = 1e-3,
      py::arg("seed") = 0);

  py::class_<gpt::GptConfig>(m, "GptConfig")
      .def(py::init<>())
      .def_static("desk", &gpt::GptConfig::desk)
      .def_static("paper_scale", &gpt::GptConfig::paper_scale)
      .def_readwrite("n_layers", &gpt::GptConfig::n_layers)
      .def_readwrite("n_heads", &gpt::GptConfig::n_heads)
      .def_readwrite("n_embd", &gpt::GptConfig::n_embd)
      .def_readwrite("d", &gpt::GptConfig::d)
      .def_readwrite("max_positions", &gpt::GptConfig::max_positions)
      .def_readwrite("curriculum", &gpt::GptConfig::curriculum)
      .def_readwrite("seed", &gpt::GptConfig::seed);

  py::class_<gpt::TrainHp>(m, "TrainHp")
      .def(py::init<>())
      .def_static("desk", &gpt::TrainHp::desk)
      .def_readwrite("lr", &gpt::TrainHp::lr)
      .def_readwrite("warmup", &gpt::TrainHp::warmup)
      .def_readwrite("steps", &gpt::TrainHp::steps)
      .def_readwrite("batch", &gpt::TrainHp::batch)
      .def_readwrite("n", &gpt::TrainHp::n);

  py::class_<gpt::GptPredictor, Predictor>(m, "GptModel")
      .def(py::init([](const gpt::GptConfig& c, std::string id) {
             return gpt::GptPredictor(c, gpt::init_params(c), std::move(id));
           }),
           py::arg("config"), py::arg("id") = "gpt")
      .def_property_readonly("config", &gpt::GptPredictor::config)
      .def_property_readonly("num_params", [](const gpt::GptPredictor& p) { return p.params().count(); })
      .def("save", [](const gpt::GptPredictor& p, const std::string& stem) {
        return runner::save_checkpoint(stem, runner::gpt_checkpoint(p.config(), p.params()));
      });

  m.def("train_gpt", [](const gpt::GptConfig& c, const gpt::TrainHp& hp, std::string id) {
        gpt::TrainResult res;
        {
          py::gil_scoped_release release;
          res = gpt::train_gpt(c, hp);
        }
        std::vector<double> losses;
        for (const auto& r : res.trace) losses.push_back(r.loss);
        return py::make_tuple(gpt::GptPredictor(c, std::move(res.params), std::move(id)), losses);
      }, py::arg("config"), py::arg("hp"), py::arg("id") = "gpt");

  m.def("count_params", &gpt::count_params, py::arg("config"));
  m.def("param_count_report", &runner::param_count_report, py::arg("config"));

  py::class_<attack::OlsPredictor, Predictor>(m, "OlsModel").def(py::init<std::string>(), py::arg("id") = "ols");
  m.def("ols_fit", [](const Array& x, const Array& y) { return to_array(attack::ols_fit(to_tensor(x), to_vec(y)).w_hat); },
        py::arg("x"), py::arg("y"));

  m.def("load_model", [](const std::string& path) {
        const auto ck = runner::load_checkpoint(path);
        const std::string id = runner::stem_of(path);
        if (ck.kind == "gpt") {
          return py::cast(gpt::GptPredictor(runner::gpt_config_of(ck), ck.params, id));
        }
        return py::cast(lsa::LsaPredictor(lsa::LsaParams::from_params(ck.params), id));
      }, py::arg("path"));
  m.def("save_lsa", [](const lsa::LsaPredictor& p, const std::string& stem) {
        return runner::save_checkpoint(stem, runner::lsa_checkpoint(p.params()));
      }, py::arg("model"), py::arg("stem"));

  m.def("hijack", [](const Predictor& model, const py::dict& task, double y_bad, const std::string& type,
                     std::size_t k, std::size_t iters, double lr_x, double lr_y, std::uint64_t seed) {
        attack::AttackSpec s;
        s.type = attack::parse_attack_type(type);
        s.k = k;
        s.iters = iters;
        s.lr_x = lr_x;
        s.lr_y = lr_y;
        s.index_policy = attack::RandomSubset{seed};
        const RegressionTask t = dict_task(task);
        HijackTarget target;
        target.y_bad = y_bad;
        attack::AttackResult r;
        {
          py::gil_scoped_release release;
          r = attack::hijack(model, t, target, s);
        }
        py::dict d;
        d["xs"] = xs_array(r.perturbed);
        d["ys"] = to_array(r.perturbed.ys);
        d["clean_prediction"] = r.clean_prediction;
        d["prediction"] = r.best_prediction;
        d["tae"] = r.tae_final;
        d["gte"] = r.gte_final;
        d["tae_trace"] = r.tae_trace;
        d["best_iter"] = r.best_iter;
        d["indices"] = r.indices;
        d["diverged"] = r.diverged;
        return d;
      }, py::arg("model"), py::arg("task"), py::arg("y_bad"), py::arg("type") = "x", py::arg("k") = 1,
      py::arg("iters") = 100, py::arg("lr_x") = 1.0, py::arg("lr_y") = 100.0, py::arg("seed") = 0);

  m.def("attack_sweep", [](const Predictor& model, std::vector<double> alphas, std::vector<std::size_t> ks,
                           std::vector<std::string> types, std::size_t n_prompts, std::vector<std::uint64_t> seeds,
                           std::size_t d, std::size_t m_examples, std::size_t iters, double lr_x, double lr_y,
                           std::size_t threads) {
        evalx::SweepGrid g;
        g.alphas = std::move(alphas);
        g.ks = std::move(ks);
        g.types.clear();
        for (const auto& t : types) g.types.push_back(attack::parse_attack_type(t));
        evalx::SweepOptions o;
        o.d = d;
        o.m = m_examples;
        o.n_prompts = n_prompts;
        o.seeds = std::move(seeds);
        o.attack.iters = iters;
        o.attack.lr_x = lr_x;
        o.attack.lr_y = lr_y;
        o.threads = threads;
        evalx::EvalReport rep;
        {
          py::gil_scoped_release release;
          rep = evalx::attack_sweep(model, g, o);
        }
        py::list out;
        for (const auto& r : rep.records) out.append(record_dict(r));
        return out;
      }, py::arg("model"), py::arg("alphas") = std::vector<double>{1.0}, py::arg("ks") = std::vector<std::size_t>{1},
      py::arg("types") = std::vector<std::string>{"x"}, py::arg("n_prompts") = 50,
      py::arg("seeds") = std::vector<std::uint64_t>{0}, py::arg("d") = 5, py::arg("m") = 10, py::arg("iters") = 100,
      py::arg("lr_x") = 1.0, py::arg("lr_y") = 100.0, py::arg("threads") = 1);

  m.def("gte", [](std::vector<double> p, std::vector<double> y) { return evalx::gte(p, y); });
  m.def("tae", [](std::vector<double> p, std::vector<double> y) { return evalx::tae(p, y); });
  m.def("aggregate", [](std::vector<double> v) {
    const auto a = evalx::aggregate(v);
    py::dict d;
    d["n"] = a.n;
    d["mean"] = a.mean;
    d["median"] = a.median;
    d["se"] = a.se;
    return d;
  });

  m.def("run", [](const std::string& command, const std::string& config, const std::string& out_dir,
                  std::optional<std::uint64_t> seed, std::size_t threads) {
        runner::RunOptions o;
        o.command = command;
        o.config_path = config;
        o.out_dir = runner::resolve_out_dir(out_dir);
        o.seed = seed;
        o.threads = threads;
        std::ostringstream log, err;
        int code;
        {
          py::gil_scoped_release release;
          code = runner::run(o, log, err);
        }
        return py::make_tuple(code, log.str(), err.str());
      }, py::arg("command"), py::arg("config"), py::arg("out_dir") = "", py::arg("seed") = py::none(),
      py::arg("threads") = 1);
}
