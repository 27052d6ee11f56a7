#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"
#include "unisal/errors.hpp"
#include "unisal/grad_check.hpp"
#include "unisal/ops.hpp"
#include "unisal/trainer.hpp"

using namespace unisal;
using testing_support::TempDir;
namespace fs = std::filesystem;

namespace {

SaliencyMap normalized(SaliencyMap m) {
  const double s = std::accumulate(m.values.begin(), m.values.end(), 0.0);
  for (double& v : m.values) v /= s;
  return m;
}

SaliencyMap random_distribution(std::size_t h, std::size_t w, std::uint64_t seed) {
  CounterRng rng(seed, 3);
  SaliencyMap m(h, w);
  for (double& v : m.values) v = 0.05 + rng.uniform();
  return normalized(m);
}

Tensor maps_tensor(const std::vector<std::vector<SaliencyMap>>& maps) {
  const std::size_t t = maps.size(), n = maps[0].size(), h = maps[0][0].height, w = maps[0][0].width;
  std::vector<double> v;
  for (const auto& row : maps)
    for (const auto& m : row) v.insert(v.end(), m.values.begin(), m.values.end());
  return Tensor::from(Shape{t, n, 1, h, w}, v);
}

// Two small synthetic domains with validation splits.
struct Fixture {
  TempDir dir{"trainer"};
  std::shared_ptr<DomainRegistry> reg = std::make_shared<DomainRegistry>();
  std::vector<Dataset> train, val;

  Fixture() {
    SyntheticDomainSpec img;
    img.name = "images";
    img.samples = 4;
    img.frames = 1;
    img.resolution = {24, 32};
    img.center_bias = 0.6;
    img.seed = 11;
    SyntheticDomainSpec vid = img;
    vid.name = "videos";
    vid.modality = Modality::Dynamic;
    vid.fps = 30;
    vid.samples = 2;
    vid.frames = 20;
    vid.color_weights = {0.0, 1.0};
    vid.seed = 12;
    for (const auto& spec : {img, vid}) {
      generate_synthetic(spec, dir.path() / spec.name / "train");
      SyntheticDomainSpec v = spec;
      v.samples = 2;
      v.seed += 100;
      generate_synthetic(v, dir.path() / spec.name / "val");
      reg->add(spec.name, spec.modality, spec.fps, spec.resolution);
    }
    for (std::size_t i = 0; i < 2; ++i) {
      const DomainId d = reg->at(i);
      train.push_back(Dataset::load(dir.path() / d.name / "train", d));
      val.push_back(Dataset::load(dir.path() / d.name / "val", d));
    }
  }

  std::vector<DomainData> data() const { return {{&train[0], &val[0]}, {&train[1], &val[1]}}; }
};

ModelConfig tiny_config() {
  ModelConfig c = ModelConfig::desk();
  c.width_multiplier = 0.125;
  return c;
}

TrainPolicy short_policy() {
  TrainPolicy p;
  p.total_epochs = 3;
  p.steps_per_epoch = 2;
  p.clip_length = 3;
  p.patience = 10;
  return p;
}

std::vector<double> values_of(const std::vector<Tensor>& ts) {
  std::vector<double> out;
  for (const auto& t : ts) out.insert(out.end(), t.data().begin(), t.data().end());
  return out;
}

std::vector<Tensor> encoder_parameters(const UnisalModel& m) {
  std::vector<Tensor> out;
  for (const auto& e : m.store().entries())
    if (e.encoder && e.role == ParamRole::Parameter) out.push_back(e.value);
  return out;
}

}  // namespace

TEST(Loss, PerfectPredictionTerms) {
  std::vector<std::vector<SaliencyMap>> gt{{random_distribution(6, 8, 1), random_distribution(6, 8, 2)}};
  std::vector<std::vector<FixationMap>> fix{{FixationMap::from_points(6, 8, {{1, 1}, {4, 5}}),
                                             FixationMap::from_points(6, 8, {{2, 3}})}};
  LossBreakdown terms;
  const Tensor loss = saliency_loss(maps_tensor(gt), gt, fix, {}, &terms);
  // eps leaves KLD(q, q) a hair below zero; it must match the metric exactly.
  EXPECT_NEAR(terms.kld, (kld(gt[0][0], gt[0][0]) + kld(gt[0][1], gt[0][1])) / 2.0, 1e-12);
  EXPECT_LE(terms.kld, 1e-6);
  // The denominators carry a 1e-7 guard relative to the map scale; these maps
  // have std/mean near 0.3, so the guard moves CC and NSS by about 1e-6.
  EXPECT_NEAR(terms.cc, 1.0, 1e-5);
  const double nss_mean = (nss(gt[0][0], fix[0][0]) + nss(gt[0][1], fix[0][1])) / 2.0;
  EXPECT_NEAR(terms.nss, nss_mean, 1e-5 * std::abs(nss_mean));
  EXPECT_NEAR(terms.total, terms.kld - 0.1 * terms.cc - 0.1 * terms.nss, 1e-12);
  EXPECT_NEAR(loss.item(), terms.total, 1e-12);
}

TEST(Loss, GuardIsScaleRelative) {
  // The same shape at 4x the pixel count: a unit-sum map's std shrinks, the
  // CC term must not.
  auto big = [](std::size_t f) {
    SaliencyMap m(6 * f, 8 * f);
    for (std::size_t r = 0; r < m.height; ++r)
      for (std::size_t c = 0; c < m.width; ++c) m(r, c) = 1.0 + ((r / f + c / f) % 3);
    return normalized(m);
  };
  for (std::size_t f : {1u, 6u}) {
    const SaliencyMap g = big(f);
    std::vector<std::vector<SaliencyMap>> gt{{g}};
    std::vector<std::vector<FixationMap>> fix{{FixationMap::from_points(g.height, g.width, {{0, 0}})}};
    LossBreakdown terms;
    saliency_loss(maps_tensor(gt), gt, fix, {}, &terms);
    EXPECT_NEAR(terms.cc, 1.0, 1e-6) << f;
  }
}

TEST(Loss, PureKldMatchesMetric) {
  std::vector<std::vector<SaliencyMap>> gt{{random_distribution(6, 8, 3)}, {random_distribution(6, 8, 4)}};
  std::vector<std::vector<SaliencyMap>> pred{{random_distribution(6, 8, 5)}, {random_distribution(6, 8, 6)}};
  std::vector<std::vector<FixationMap>> fix{{FixationMap::from_points(6, 8, {{0, 0}})},
                                            {FixationMap::from_points(6, 8, {{5, 7}})}};
  LossBreakdown terms;
  const Tensor loss = saliency_loss(maps_tensor(pred), gt, fix, {0.0, 0.0}, &terms);
  const double expected = (kld(gt[0][0], pred[0][0]) + kld(gt[1][0], pred[1][0])) / 2.0;
  EXPECT_NEAR(loss.item(), expected, 1e-12);
  EXPECT_NEAR(terms.kld, expected, 1e-12);
}

TEST(Loss, GradientCheck) {
  std::vector<std::vector<SaliencyMap>> gt{{random_distribution(6, 8, 7), random_distribution(6, 8, 8)},
                                           {random_distribution(6, 8, 9), random_distribution(6, 8, 10)}};
  std::vector<std::vector<FixationMap>> fix{
      {FixationMap::from_points(6, 8, {{1, 2}}), FixationMap::from_points(6, 8, {{3, 3}, {0, 7}})},
      {FixationMap::from_points(6, 8, {{5, 0}}), FixationMap::from_points(6, 8, {{2, 6}})}};
  const Tensor logits = testing_support::random_tensor({4, 1, 6, 8}, 21, true);
  const auto r = grad_check(
      [&](const std::vector<Tensor>& in) {
        const Tensor p = reshape(softmax_spatial(in[0]), {2, 2, 1, 6, 8});
        return saliency_loss(p, gt, fix, {});
      },
      {logits});
  EXPECT_LT(r.max_rel_error(), 1e-5);
}

TEST(Sgd, ClipsElementwise) {
  Tensor p = Tensor::from(Shape{2}, {0.0, 0.0}, true);
  backward(sum(mul(p, Tensor::from(Shape{2}, {3.0, -5.0}))));
  OptimizerState s;
  s.base_lr = 1.0;
  s.momentum = 0.0;
  s.weight_decay = 0.0;
  const std::vector<Tensor> params{p};
  const std::vector<double> scales{1.0};
  sgd_step(params, scales, s);
  EXPECT_EQ(p.data()[0], -2.0);
  EXPECT_EQ(p.data()[1], 2.0);
}

TEST(Sgd, MomentumRecursion) {
  Tensor p = Tensor::from(Shape{1}, {1.0}, true);
  OptimizerState s;
  s.base_lr = 0.1;
  s.weight_decay = 0.0;
  const std::vector<Tensor> params{p};
  const std::vector<double> scales{1.0};
  backward(sum(p));
  sgd_step(params, scales, s);
  EXPECT_NEAR(p.data()[0], 0.9, 1e-15);
  sgd_step(params, scales, s);  // same gradient again
  EXPECT_NEAR(p.data()[0], 0.9 - 0.19, 1e-15);
}

TEST(Sgd, WeightDecayAndSkips) {
  Tensor p = Tensor::from(Shape{1}, {2.0}, true);
  Tensor q = Tensor::from(Shape{1}, {5.0}, true);
  backward(add(sum(affine(p, 0.0, 0.0)), sum(affine(q, 0.0, 0.0))));
  OptimizerState s;
  s.base_lr = 0.5;
  s.momentum = 0.0;
  const std::vector<Tensor> params{p, q};
  const std::vector<double> scales{1.0, 0.0};
  sgd_step(params, scales, s);
  EXPECT_NEAR(p.data()[0], 2.0 - 0.5 * 1e-4 * 2.0, 1e-15);
  EXPECT_EQ(q.data()[0], 5.0);
  EXPECT_TRUE(s.velocity.find(q.id()) == s.velocity.end());

  Tensor r = Tensor::from(Shape{1}, {3.0}, true);
  backward(sum(affine(r, 0.0, 0.0)));
  s.weight_decay = 0.0;
  const std::vector<Tensor> only_r{r};
  const std::vector<double> one{1.0};
  sgd_step(only_r, one, s);
  EXPECT_EQ(r.data()[0], 3.0);
  EXPECT_THROW(sgd_step(only_r, std::vector<double>{}, s), ContractError);
}

TEST(Schedule, EpochLearningRate) {
  OptimizerState s;
  const double expected[] = {0.04, 0.032, 0.0256, 0.02048};
  for (std::size_t e = 0; e < 4; ++e) {
    s.epoch = e;
    EXPECT_NEAR(s.epoch_lr(), expected[e], 1e-15);
  }
}

TEST(Schedule, FreezePolicy) {
  TrainPolicy p;
  EXPECT_EQ(apply_freeze_policy(p, 0).encoder, 0.0);
  EXPECT_EQ(apply_freeze_policy(p, 1).encoder, 0.0);
  EXPECT_NEAR(apply_freeze_policy(p, 2).encoder, 0.1, 1e-15);
  EXPECT_EQ(apply_freeze_policy(p, 0).other, 1.0);
  EXPECT_EQ(apply_freeze_policy(p, 5).other, 1.0);
}

TEST(Policy, KeyValueRoundTrip) {
  TrainPolicy p = short_policy();
  p.early_stop_domain = "videos";
  p.batch_sizes["images"] = 3;
  p.restore_best = false;
  KeyValues kv;
  p.to_key_values(kv);
  const TrainPolicy q = TrainPolicy::from_key_values(kv);
  EXPECT_EQ(q.total_epochs, 3u);
  EXPECT_EQ(q.steps_per_epoch, 2u);
  EXPECT_EQ(q.clip_length, 3u);
  EXPECT_EQ(q.early_stop_domain, "videos");
  EXPECT_EQ(q.batch_sizes.at("images"), 3u);
  EXPECT_FALSE(q.restore_best);
}

TEST(Train, FrozenEncoderAndRecordedRates) {
  Fixture fx;
  UnisalModel model = UnisalModel::build(tiny_config(), fx.reg, 3);
  const auto enc = encoder_parameters(model);
  ASSERT_FALSE(enc.empty());
  const auto before = values_of(enc);
  std::vector<std::vector<double>> after_epoch;
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord&) { after_epoch.push_back(values_of(enc)); };
  const TrainingReport rep = train(model, fx.data(), short_policy(), {}, 5, hooks);
  ASSERT_EQ(after_epoch.size(), 3u);
  EXPECT_EQ(after_epoch[0], before);
  EXPECT_EQ(after_epoch[1], before);
  EXPECT_NE(after_epoch[2], before);
  ASSERT_EQ(rep.steps.size(), 6u);
  for (const auto& s : rep.steps) {
    const double lr = 0.04 * std::pow(0.8, static_cast<double>(s.epoch));
    const double factor = s.domain == "images" ? 0.5 : 1.0;
    EXPECT_NEAR(s.lr_other, lr * factor, 1e-15);
    EXPECT_NEAR(s.lr_encoder, s.epoch < 2 ? 0.0 : lr / 10.0 * factor, 1e-15);
    EXPECT_TRUE(std::isfinite(s.loss));
  }
}

TEST(Train, DeterministicForSeed) {
  Fixture fx;
  UnisalModel a = UnisalModel::build(tiny_config(), fx.reg, 3);
  UnisalModel b = UnisalModel::build(tiny_config(), fx.reg, 3);
  TrainPolicy p = short_policy();
  p.total_epochs = 2;
  const auto ra = train(a, fx.data(), p, {}, 9);
  const auto rb = train(b, fx.data(), p, {}, 9);
  EXPECT_EQ(ra.to_text(), rb.to_text());
  EXPECT_EQ(values_of(a.store().parameters()), values_of(b.store().parameters()));
}

TEST(Train, EarlyStoppingKeepsBestEpoch) {
  Fixture fx;
  UnisalModel model = UnisalModel::build(tiny_config(), fx.reg, 4);
  TrainPolicy p = short_policy();
  p.total_epochs = 6;
  p.patience = 1;
  p.early_stop_domain = "images";
  p.base_lr = 0.5;  // large steps make a validation regression likely
  const auto rep = train(model, fx.data(), p, {}, 2);
  ASSERT_FALSE(rep.epochs.empty());
  std::size_t argmin = 0;
  for (std::size_t e = 0; e < rep.epochs.size(); ++e) {
    EXPECT_EQ(rep.epochs[e].monitor, rep.epochs[e].val_loss.at("images"));
    if (rep.epochs[e].monitor < rep.epochs[argmin].monitor) argmin = e;
  }
  EXPECT_EQ(rep.best_epoch, argmin);
  EXPECT_EQ(rep.best_monitor, rep.epochs[argmin].monitor);
  if (rep.stopped_early) EXPECT_EQ(rep.epochs.size(), argmin + 1 + p.patience);
  // Restored parameters reproduce the best validation loss.
  EXPECT_NEAR(validation_loss(model, fx.val[0], {}, p.clip_length).total, rep.best_monitor, 1e-12);
}

TEST(Evaluate, PerfectPredictionsAndAggregation) {
  std::vector<std::vector<SaliencyMap>> gt, pred;
  std::vector<std::vector<FixationMap>> fix;
  std::vector<std::string> ids;
  for (std::uint64_t s = 0; s < 4; ++s) {
    gt.push_back({random_distribution(6, 8, 30 + s), random_distribution(6, 8, 40 + s)});
    pred.push_back({random_distribution(6, 8, 50 + s), random_distribution(6, 8, 60 + s)});
    fix.push_back({FixationMap::from_points(6, 8, {{s, s + 1}}), FixationMap::from_points(6, 8, {{5 - s, 2}})});
    ids.push_back("s" + std::to_string(s));
  }
  const auto metrics = parse_metrics("cc,sim,kld,nss");
  const auto perfect = evaluate_predictions(gt, gt, fix, ids, metrics, 1);
  for (const auto& row : perfect.scores) {
    EXPECT_NEAR(row[0], 1.0, 1e-12);
    EXPECT_NEAR(row[1], 1.0, 1e-12);
    EXPECT_LE(row[2], 1e-6);
    EXPECT_GT(row[2], -48 * kMetricEps);
  }
  const auto r = evaluate_predictions(pred, gt, fix, ids, metrics, 1);
  ASSERT_EQ(r.scores.size(), 4u);
  EXPECT_EQ(r.sample_ids, ids);
  for (std::size_t m = 0; m < metrics.size(); ++m) {
    double mean = 0;
    for (std::size_t s = 0; s < 4; ++s) {
      const double f0 = m == 0 ? cc(pred[s][0], gt[s][0]) : m == 1 ? sim(pred[s][0], gt[s][0])
                      : m == 2 ? kld(gt[s][0], pred[s][0]) : nss(pred[s][0], fix[s][0]);
      const double f1 = m == 0 ? cc(pred[s][1], gt[s][1]) : m == 1 ? sim(pred[s][1], gt[s][1])
                      : m == 2 ? kld(gt[s][1], pred[s][1]) : nss(pred[s][1], fix[s][1]);
      EXPECT_NEAR(r.scores[s][m], (f0 + f1) / 2.0, 1e-12);
      mean += r.scores[s][m] / 4.0;
    }
    EXPECT_NEAR(r.summary[m].mean, mean, 1e-12);
    EXPECT_EQ(r.summary[m].scored, 4u);
  }
}

TEST(Evaluate, ModelOnDatasetIsFinite) {
  Fixture fx;
  UnisalModel model = UnisalModel::build(tiny_config(), fx.reg, 1);
  const auto metrics = parse_metrics("auc_j,s_auc,cc,kld,ig");
  for (const auto& ds : fx.val) {
    const auto r = evaluate(model, ds, metrics, 3);
    ASSERT_EQ(r.scores.size(), ds.size());
    for (const auto& s : r.summary) {
      EXPECT_TRUE(std::isfinite(s.mean));
      EXPECT_EQ(s.failures, 0u);
    }
    EXPECT_EQ(r.to_table(), evaluate(model, ds, metrics, 3).to_table());
  }
}

TEST(Evaluate, ParseMetrics) {
  EXPECT_EQ(parse_metrics("auc_j,s_auc,sim,cc,nss,kld,ig").size(), 7u);
  try {
    parse_metrics("cc,bogus");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("bogus"), std::string::npos);
    for (const auto& [name, m] : metric_names()) EXPECT_NE(msg.find(name), std::string::npos) << name;
  }
}
