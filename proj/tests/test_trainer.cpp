#include <algorithm>
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "xmodal/binary_io.hpp"
#include "xmodal/error.hpp"
#include "xmodal/ops.hpp"
#include "xmodal/trainer.hpp"

using namespace xmodal;

namespace {

TrainingConfig quick_config(std::size_t iterations = 4) {
  TrainingConfig cfg;
  cfg.total_iterations = iterations;
  cfg.tuples = 4;
  cfg.seed = 21;
  return cfg;
}

const synth::Dataset& small_dataset() {
  static const synth::Dataset ds = synth::generate_dataset(40, synth::DatasetSpec{}, 9);
  return ds;
}

Parameter make_param(const std::string& name, ParamKind kind, std::vector<double> values) {
  const std::size_t n = values.size();
  return Parameter{name, kind, Tensor({n}, std::move(values), true)};
}

}  // namespace

TEST_CASE("sgd with zero gradients and no decay leaves parameters unchanged") {
  std::vector<double> p{1.0, -2.0, 3.5}, v(3, 0.0);
  const std::vector<double> g(3, 0.0), before = p;
  for (int i = 0; i < 5; ++i) sgd_update(p, g, v, 0.1, 0.9, 0.0);
  CHECK(p == before);
}

TEST_CASE("sgd without momentum is plain gradient descent") {
  std::vector<double> p{1.0, -2.0}, v(2, 0.0);
  const std::vector<double> g{0.5, -0.25};
  sgd_update(p, g, v, 0.1, 0.0, 0.0);
  CHECK(p[0] == doctest::Approx(1.0 - 0.05).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.025).epsilon(1e-15));
}

TEST_CASE("two momentum steps match the scalar recurrence") {
  const double lr = 0.05, m = 0.9, wd = 0.01;
  std::vector<double> p{0.7}, v{0.0};
  const std::vector<double> g{0.3};
  // Oracle: v1 = g + wd p0, p1 = p0 - lr v1, v2 = m v1 + g + wd p1, p2 = p1 - lr v2.
  const double p0 = 0.7, v1 = 0.3 + wd * p0, p1 = p0 - lr * v1, v2 = m * v1 + 0.3 + wd * p1, p2 = p1 - lr * v2;
  sgd_update(p, g, v, lr, m, wd);
  sgd_update(p, g, v, lr, m, wd);
  CHECK(p[0] == doctest::Approx(p2).epsilon(1e-14));
  CHECK(v[0] == doctest::Approx(v2).epsilon(1e-14));

  // Without decay the displacement is -lr g (2 + m).
  std::vector<double> q{0.0}, u{0.0};
  sgd_update(q, g, u, lr, m, 0.0);
  sgd_update(q, g, u, lr, m, 0.0);
  CHECK(q[0] == doctest::Approx(-lr * 0.3 * (2 + m)).epsilon(1e-14));
}

TEST_CASE("sgd checks buffer lengths") {
  std::vector<double> p(3), v(2);
  const std::vector<double> g(3);
  CHECK_THROWS_AS(sgd_update(p, g, v, 0.1, 0.9, 0.0), DimensionError);
}

TEST_CASE("optimizer exempts biases and batchnorm parameters from weight decay") {
  std::vector<Parameter> params{make_param("w", ParamKind::weight, {1.0, 2.0}),
                                make_param("b", ParamKind::bias, {1.0}),
                                make_param("gamma", ParamKind::bn_gamma, {1.0}),
                                make_param("beta", ParamKind::bn_beta, {1.0})};
  std::vector<Parameter*> ptrs;
  for (auto& p : params) ptrs.push_back(&p);
  SgdOptimizer opt(ptrs);
  opt.step(0.1, 0.9, 0.5);
  CHECK(params[0].value.at(0) == doctest::Approx(1.0 - 0.1 * 0.5 * 1.0));
  CHECK(params[0].value.at(1) == doctest::Approx(2.0 - 0.1 * 0.5 * 2.0));
  for (std::size_t i = 1; i < params.size(); ++i) CHECK(params[i].value.at(0) == 1.0);
}

TEST_CASE("learning-rate schedule drops exactly once at the drop iteration") {
  TrainingConfig cfg;
  cfg.total_iterations = 4000;
  CHECK(cfg.drop_iteration() == 3000);
  CHECK(cfg.lr_at(0) == 0.01);
  CHECK(cfg.lr_at(2999) == 0.01);
  CHECK(cfg.lr_at(3000) == doctest::Approx(0.001).epsilon(1e-15));
  CHECK(cfg.lr_at(3999) == cfg.lr_at(3000));
  cfg.lr_drop_iteration = 10;
  CHECK(cfg.lr_at(9) == 0.01);
  CHECK(cfg.lr_at(10) == doctest::Approx(0.001).epsilon(1e-15));
}

TEST_CASE("effective weights zero the disabled term per mode") {
  TrainingConfig cfg;
  cfg.loss_weights = {2.0, 3.0};
  cfg.loss_mode = LossMode::full;
  CHECK(cfg.effective_weights().cross == 2.0);
  CHECK(cfg.effective_weights().div == 3.0);
  cfg.loss_mode = LossMode::cross_only;
  CHECK(cfg.effective_weights().div == 0.0);
  CHECK(cfg.effective_weights().cross > 0.0);
  cfg.loss_mode = LossMode::div_only;
  CHECK(cfg.effective_weights().cross == 0.0);
  CHECK(cfg.effective_weights().div > 0.0);
}

TEST_CASE("zero iterations leave the model bitwise at its initialization") {
  TrainingConfig cfg = quick_config(0);
  auto model = init_model_for(cfg, 3);
  const std::string before = model.serialize();
  const auto log = train(small_dataset(), model, cfg);
  CHECK(log.empty());
  CHECK(model.serialize() == before);
}

TEST_CASE("training is deterministic in logs and checkpoints") {
  const auto dir = std::filesystem::temp_directory_path() / "xmodal_test_trainer";
  std::filesystem::remove_all(dir);
  TrainingConfig cfg = quick_config(6);
  cfg.checkpoint_every = 2;
  auto run = [&](const std::string& sub) {
    auto model = init_model_for(cfg, 3);
    TrainOptions opt;
    opt.out_dir = dir / sub;
    return metrics_csv(train(small_dataset(), model, cfg, opt));
  };
  const std::string a = run("a"), b = run("b");
  CHECK(a == b);
  for (const char* f : {"ckpt_2.xmck", "ckpt_4.xmck", "final.xmck"}) {
    REQUIRE(std::filesystem::exists(dir / "a" / f));
    CHECK(io::read_file((dir / "a" / f).string()) == io::read_file((dir / "b" / f).string()));
  }
  CHECK(!std::filesystem::exists(dir / "a" / "ckpt_6.xmck"));
  std::filesystem::remove_all(dir);
}

TEST_CASE("metrics stay inside their bounds for every mode") {
  for (LossMode mode : {LossMode::full, LossMode::cross_only, LossMode::div_only, LossMode::concat}) {
    TrainingConfig cfg = quick_config(5);
    cfg.loss_mode = mode;
    auto model = init_model_for(cfg, 4);
    const auto log = train(small_dataset(), model, cfg);
    REQUIRE(log.size() == 5);
    for (std::size_t i = 0; i < log.size(); ++i) {
      const auto& r = log[i];
      CHECK(r.iteration == i);
      for (double d : {r.mean_cross_modal_distance, r.mean_cross_pair_distance_f, r.mean_cross_pair_distance_g,
                       r.feature_spread, r.loss_cross}) {
        CHECK(d >= 0.0);
        CHECK(d <= 2.0 + 1e-6);
      }
      CHECK(r.loss_div <= 0.0);
      CHECK(r.loss_div >= -2.0 - 1e-6);
      CHECK(r.lr == cfg.lr_at(i));
    }
  }
}

TEST_CASE("metrics at iteration 0 do not depend on the loss mode") {
  TrainingConfig a = quick_config(1), b = quick_config(1);
  b.loss_mode = LossMode::cross_only;
  auto ma = init_model_for(a, 5), mb = init_model_for(b, 5);
  const auto la = train(small_dataset(), ma, a), lb = train(small_dataset(), mb, b);
  CHECK(la[0].mean_cross_modal_distance == lb[0].mean_cross_modal_distance);
  CHECK(la[0].feature_spread == lb[0].feature_spread);
  CHECK(la[0].loss_cross == lb[0].loss_cross);
  CHECK(la[0].loss_div == lb[0].loss_div);
}

TEST_CASE("cross_only applies no divergence gradient") {
  // One step with only the divergence term disabled equals one step with
  // cross weight 1 and div weight 0 under the full mode.
  TrainingConfig a = quick_config(2), b = quick_config(2);
  a.loss_mode = LossMode::cross_only;
  b.loss_weights = {1.0, 0.0};
  auto ma = init_model_for(a, 6), mb = init_model_for(b, 6);
  train(small_dataset(), ma, a);
  train(small_dataset(), mb, b);
  CHECK(ma.serialize() == mb.serialize());
}

TEST_CASE("feature spread and collapse detection") {
  std::vector<double> same;
  for (int r = 0; r < 10; ++r)
    for (int d = 0; d < 8; ++d) same.push_back(0.1 * d + 1);
  CHECK(feature_spread(Tensor({10, 8}, same), 1e-10) == doctest::Approx(0.0).scale(1.0).epsilon(1e-9));

  Rng rng(1);
  std::vector<double> random(30 * 64);
  for (double& v : random) v = rng.uniform(-1, 1);
  // Independent zero-mean rows are close to orthogonal.
  const double s = feature_spread(Tensor({30, 64}, random), 1e-10);
  CHECK(s == doctest::Approx(1.0).epsilon(0.1));

  std::vector<MetricsRecord> collapsed(kCollapseWindow), spread(kCollapseWindow);
  for (auto& r : collapsed) r.feature_spread = 0.0;
  for (auto& r : spread) r.feature_spread = s;
  CHECK(detect_collapse(collapsed));
  CHECK_FALSE(detect_collapse(spread));
  CHECK_THROWS_AS(detect_collapse(std::span(collapsed).first(kCollapseWindow - 1)), ConfigError);
}

TEST_CASE("config text round trips and reports unknown modes and keys") {
  TrainingConfig cfg;
  cfg.total_iterations = 123;
  cfg.loss_mode = LossMode::div_only;
  cfg.loss_weights = {0.3, 1.7};
  cfg.seed = 77;
  cfg.sampler.channel_split = false;
  cfg.lr_initial = 0.1 / 3;
  const TrainingConfig back = TrainingConfig::from_text(cfg.to_text());
  CHECK(back.to_text() == cfg.to_text());
  CHECK(back.lr_initial == cfg.lr_initial);
  CHECK(back.drop_iteration() == cfg.drop_iteration());

  try {
    parse_loss_mode("both");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find(kLossModeList) != std::string::npos);
  }
  CHECK_THROWS_AS(TrainingConfig::from_text("no_such_key=1\n"), ConfigError);
  CHECK_THROWS_AS(TrainingConfig::from_text("momentum=1.5\n").validate(), ConfigError);
  const auto partial = TrainingConfig::from_text("# comment\n  seed = 5  \n", cfg);
  CHECK(partial.seed == 5);
  CHECK(partial.total_iterations == 123);
}

TEST_CASE("metrics csv round trips exactly") {
  auto model = init_model_for(quick_config(3), 2);
  const auto log = train(small_dataset(), model, quick_config(3));
  const std::string csv = metrics_csv(log);
  CHECK(csv.rfind(metrics_csv_header(), 0) == 0);
  const auto back = parse_metrics_csv(csv);
  REQUIRE(back.size() == log.size());
  CHECK(metrics_csv(back) == csv);
  CHECK(back[2].loss_total == log[2].loss_total);
  CHECK_THROWS_AS(parse_metrics_csv("iteration,loss\n1,2\n"), FormatError);
}

TEST_CASE("divergent training aborts with the iteration and last metrics") {
  TrainingConfig cfg = quick_config(20);
  cfg.lr_initial = 1e300;
  auto model = init_model_for(cfg, 1);
  try {
    train(small_dataset(), model, cfg);
    FAIL("expected TrainingAborted");
  } catch (const TrainingAborted& e) {
    CHECK(e.iteration() >= 1);
    CHECK(e.iteration() < 20);
    CHECK(e.last_metrics().iteration + 1 == e.iteration());
  }
}

TEST_CASE("configs are validated before training") {
  TrainingConfig cfg = quick_config(1);
  cfg.tuples = 100;  // 2B distinct clips exceed the dataset
  auto model = init_model_for(cfg, 1);
  CHECK_THROWS(train(small_dataset(), model, cfg));
  cfg = quick_config(1);
  cfg.loss_mode = LossMode::concat;
  auto no_head = init_model_for(quick_config(1), 1);
  CHECK_THROWS_AS(train(small_dataset(), no_head, cfg), ConfigError);
}
