#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <numeric>

#include "degpr/metrics.hpp"
#include "degpr/rng.hpp"
#include "oracle_helpers.hpp"

using namespace degpr;

namespace {

std::pair<int, BoundingBox> gold(int cls, double x0, double y0, double w, double h) {
  return {cls, BoundingBox{x0, y0, x0 + w, y0 + h}};
}

// Exhaustive optimal assignment (maximum matching) for small instances.
int optimal_match_count(const std::vector<Detection>& preds,
                        const std::vector<std::pair<int, BoundingBox>>& golds,
                        double threshold) {
  const int n = static_cast<int>(preds.size());
  int best = 0;
  std::vector<int> assignment(n, -1);
  const std::function<void(int, int, std::vector<bool>&)> rec =
      [&](int pi, int matched, std::vector<bool>& used) {
        best = std::max(best, matched);
        if (pi == n) return;
        rec(pi + 1, matched, used);
        for (std::size_t g = 0; g < golds.size(); ++g) {
          if (used[g] || golds[g].first != preds[pi].class_id) continue;
          if (iou(preds[pi].box, golds[g].second) < threshold) continue;
          used[g] = true;
          rec(pi + 1, matched + 1, used);
          used[g] = false;
        }
      };
  std::vector<bool> used(golds.size(), false);
  rec(0, 0, used);
  return best;
}

}  // namespace

TEST_CASE("match_detections threshold behaviour") {
  const std::vector<std::pair<int, BoundingBox>> golds{gold(0, 0, 0, 10, 10)};
  // IoU = 6*10 / (100+100-60) = 0.428...; craft one with IoU 0.6 instead:
  // overlap 75 against union 125 -> 0.6
  const Detection pred{{0, 0, 7.5, 10}, 0, 0.9};
  const double v = iou(pred.box, golds[0].second);
  REQUIRE_THAT(v, Catch::Matchers::WithinAbs(0.75, 1e-12));

  SECTION("match at threshold 0.5") {
    const MatchResult m = match_detections({pred}, golds, 0.5);
    CHECK(m.matches.size() == 1);
    CHECK(m.unmatched_preds.empty());
    CHECK(m.unmatched_golds.empty());
  }
  SECTION("no match at threshold 0.8") {
    const MatchResult m = match_detections({pred}, golds, 0.8);
    CHECK(m.matches.empty());
    CHECK(m.unmatched_preds.size() == 1);
    CHECK(m.unmatched_golds.size() == 1);
  }
  SECTION("class mismatch never matches") {
    const Detection wrong{{0, 0, 10, 10}, 1, 0.9};
    const MatchResult m = match_detections({wrong}, golds, 0.3);
    CHECK(m.matches.empty());
  }
}

TEST_CASE("greedy matching equals optimal assignment on well-separated instances") {
  Rng rng(101);
  for (int trial = 0; trial < 30; ++trial) {
    // golds on a coarse grid; preds jittered copies plus spurious far boxes
    std::vector<std::pair<int, BoundingBox>> golds;
    std::vector<Detection> preds;
    const int n = 2 + static_cast<int>(rng.index(5));
    for (int i = 0; i < n; ++i) {
      const double x = 40.0 * (i % 3), y = 40.0 * (i / 3);
      const int cls = static_cast<int>(rng.index(2));
      golds.push_back(gold(cls, x, y, 20, 20));
      if (rng.uniform() < 0.8) {
        preds.push_back({{x + rng.uniform(-2, 2), y + rng.uniform(-2, 2),
                          x + 20 + rng.uniform(-2, 2), y + 20 + rng.uniform(-2, 2)},
                         cls, rng.uniform(0.5, 1.0)});
      }
      if (rng.uniform() < 0.3) {
        preds.push_back({{x + 200, y + 200, x + 215, y + 215}, cls, rng.uniform(0.1, 0.9)});
      }
    }
    const MatchResult m = match_detections(preds, golds, 0.5);
    CHECK(static_cast<int>(m.matches.size()) == optimal_match_count(preds, golds, 0.5));
  }
}

TEST_CASE("average precision corner cases") {
  SECTION("all correct") {
    CHECK(average_precision({{0.9, true}, {0.8, true}, {0.7, true}}, 3) == 1.0);
  }
  SECTION("all wrong") {
    CHECK(average_precision({{0.9, false}, {0.8, false}}, 2) == 0.0);
  }
  SECTION("no predictions") { CHECK(average_precision({}, 3) == 0.0); }
  SECTION("zero gold is an error") {
    CHECK_THROWS_AS(average_precision({{0.9, true}}, 0), std::invalid_argument);
  }
}

TEST_CASE("average precision matches hand-worked PR curves") {
  // Case 1: TP,FP,TP,TP,FP over 3 golds.
  //   cum: (1,0) (1,1) (2,1) (3,1) (3,2)
  //   precision: 1, 1/2, 2/3, 3/4, 3/5   recall: 1/3, 1/3, 2/3, 1, 1
  //   envelope at recall steps 1/3, 2/3, 1 -> 1, 3/4, 3/4
  //   AP = (1/3)(1) + (1/3)(3/4) + (1/3)(3/4) = 5/6
  CHECK_THAT(average_precision(
                 {{0.9, true}, {0.85, false}, {0.8, true}, {0.7, true}, {0.6, false}}, 3),
             Catch::Matchers::WithinAbs(5.0 / 6.0, 1e-12));

  // Case 2: single TP over 2 golds -> AP = (1/2)(1) = 1/2
  CHECK_THAT(average_precision({{0.9, true}}, 2), Catch::Matchers::WithinAbs(0.5, 1e-12));

  // Case 3: FP then TP over 1 gold: envelope at recall 1 is 1/2 -> AP = 1/2
  CHECK_THAT(average_precision({{0.9, false}, {0.8, true}}, 1),
             Catch::Matchers::WithinAbs(0.5, 1e-12));

  // Case 4: TP,TP,FP over 2 golds: AP = (1/2)(1) + (1/2)(1) = 1
  CHECK_THAT(average_precision({{0.9, true}, {0.8, true}, {0.7, false}}, 2),
             Catch::Matchers::WithinAbs(1.0, 1e-12));

  // Case 5: FP,TP,FP,TP over 2 golds:
  //   precision: 0, 1/2, 1/3, 1/2   recall: 0, 1/2, 1/2, 1
  //   envelope at steps 1/2, 1 -> 1/2, 1/2; AP = 1/2
  CHECK_THAT(average_precision({{0.9, false}, {0.8, true}, {0.7, false}, {0.6, true}}, 2),
             Catch::Matchers::WithinAbs(0.5, 1e-12));
}

TEST_CASE("dataset evaluation aggregates per class") {
  // image 0: one gold of each class; pred hits class 0, misses class 1
  std::vector<std::vector<std::pair<int, BoundingBox>>> golds{
      {gold(0, 0, 0, 10, 10), gold(1, 30, 30, 12, 12)}};
  std::vector<std::vector<Detection>> preds{{{{0, 0, 10, 10}, 0, 0.9},
                                             {{60, 60, 70, 70}, 1, 0.8}}};
  const DetectionMetrics m = evaluate_detections(preds, golds, 0.5, 2);
  CHECK(m.per_class[0].tp == 1);
  CHECK(m.per_class[0].fp == 0);
  CHECK(m.per_class[1].tp == 0);
  CHECK(m.per_class[1].fp == 1);
  CHECK_THAT(m.map, Catch::Matchers::WithinAbs(0.5, 1e-12));    // AP 1 and 0
  CHECK_THAT(m.precision, Catch::Matchers::WithinAbs(0.5, 1e-12));
  CHECK_THAT(m.recall, Catch::Matchers::WithinAbs(0.5, 1e-12));
}

TEST_CASE("classes without gold are excluded from mAP with a warning") {
  std::vector<std::vector<std::pair<int, BoundingBox>>> golds{{gold(0, 0, 0, 10, 10)}};
  std::vector<std::vector<Detection>> preds{{{{0, 0, 10, 10}, 0, 0.9}}};
  const DetectionMetrics m = evaluate_detections(preds, golds, 0.5, 3);
  CHECK(m.map == 1.0);
  CHECK(m.classes_without_gold == std::vector<int>{1, 2});
}

TEST_CASE("counting report") {
  SECTION("perfect counts give zero errors") {
    std::vector<TileCounts> tiles;
    for (int t = 0; t < 3; ++t) {
      TileCounts tile;
      tile.source = "img0";
      tile.preds.push_back({{0, 0, 5, 5}, 0, 0.9});
      tile.golds.push_back(gold(0, 0, 0, 5, 5));
      tiles.push_back(tile);
    }
    const CountReport r = counting_report(tiles, 1);
    CHECK(r.mae_per_class[0] == 0.0);
    CHECK(r.mre_per_class[0] == 0.0);
    REQUIRE(r.images.size() == 1);
    CHECK(r.images[0].pred[0] == 3);  // summed across subimages
  }
  SECTION("hand-computed MAE and MRE") {
    // two full images, single class: errors {2,4}, golds {10,20}
    std::vector<TileCounts> tiles(2);
    tiles[0].source = "a";
    for (int i = 0; i < 12; ++i) tiles[0].preds.push_back({{0, 0, 2, 2}, 0, 0.5});
    for (int i = 0; i < 10; ++i) tiles[0].golds.push_back(gold(0, 0, 0, 2, 2));
    tiles[1].source = "b";
    for (int i = 0; i < 16; ++i) tiles[1].preds.push_back({{0, 0, 2, 2}, 0, 0.5});
    for (int i = 0; i < 20; ++i) tiles[1].golds.push_back(gold(0, 0, 0, 2, 2));
    const CountReport r = counting_report(tiles, 1);
    CHECK_THAT(r.mae_per_class[0], Catch::Matchers::WithinAbs(3.0, 1e-12));
    CHECK_THAT(r.mre_per_class[0], Catch::Matchers::WithinAbs(20.0, 1e-12));
  }
  SECTION("gold-zero images are excluded from MRE but kept in MAE") {
    std::vector<TileCounts> tiles(2);
    tiles[0].source = "a";
    tiles[0].preds.push_back({{0, 0, 2, 2}, 0, 0.5});  // 1 pred, 0 gold
    tiles[1].source = "b";
    tiles[1].preds.push_back({{0, 0, 2, 2}, 0, 0.5});
    tiles[1].golds.push_back(gold(0, 0, 0, 2, 2));     // exact
    const CountReport r = counting_report(tiles, 1);
    CHECK_THAT(r.mae_per_class[0], Catch::Matchers::WithinAbs(0.5, 1e-12));
    CHECK(r.mre_per_class[0] == 0.0);
  }
  SECTION("random sweep matches a direct recount oracle") {
    Rng rng(55);
    for (int trial = 0; trial < 20; ++trial) {
      std::vector<TileCounts> tiles;
      std::map<std::string, std::array<long, 4>> truth;  // pred0,gold0,pred1,gold1
      const int sources = 2 + static_cast<int>(rng.index(3));
      for (int s = 0; s < sources; ++s) {
        const std::string name = "src" + std::to_string(s);
        for (int t = 0; t < 3; ++t) {
          TileCounts tile;
          tile.source = name;
          const int np0 = static_cast<int>(rng.index(4));
          const int ng0 = static_cast<int>(rng.index(4));
          const int np1 = static_cast<int>(rng.index(4));
          const int ng1 = static_cast<int>(rng.index(4));
          for (int i = 0; i < np0; ++i) tile.preds.push_back({{0, 0, 2, 2}, 0, 0.5});
          for (int i = 0; i < ng0; ++i) tile.golds.push_back(gold(0, 0, 0, 2, 2));
          for (int i = 0; i < np1; ++i) tile.preds.push_back({{0, 0, 2, 2}, 1, 0.5});
          for (int i = 0; i < ng1; ++i) tile.golds.push_back(gold(1, 0, 0, 2, 2));
          auto& acc = truth[name];
          acc[0] += np0;
          acc[1] += ng0;
          acc[2] += np1;
          acc[3] += ng1;
          tiles.push_back(std::move(tile));
        }
      }
      const CountReport r = counting_report(tiles, 2);
      double mae0 = 0;
      for (const auto& [name, acc] : truth) mae0 += std::abs(acc[0] - acc[1]);
      mae0 /= truth.size();
      CHECK_THAT(r.mae_per_class[0], Catch::Matchers::WithinAbs(mae0, 1e-12));
    }
  }
}

TEST_CASE("q ratio and celiac classification") {
  CHECK_THAT(q_ratio(30, 120), Catch::Matchers::WithinAbs(25.0, 1e-12));
  CHECK(classify_celiac(q_ratio(30, 120)));  // boundary inclusive
  CHECK_FALSE(classify_celiac(q_ratio(10, 100)));
  CHECK_FALSE(classify_celiac(q_ratio(0, 50)));
  CHECK_THROWS_AS(q_ratio(5, 0), std::invalid_argument);

  // monotone in iel_count for fixed en_count
  double prev = -1;
  for (long iel = 0; iel <= 50; iel += 5) {
    const double r = q_ratio(iel, 80);
    CHECK(r > prev);
    prev = r;
  }
}

TEST_CASE("classification metrics") {
  SECTION("perfect predictions") {
    const std::vector<bool> y{true, false, true, false};
    const ClassificationMetrics m = classification_metrics(y, y);
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.f1 == 1.0);
    CHECK(m.accuracy == 1.0);
  }
  SECTION("all-negative predictions have zero recall") {
    const std::vector<bool> pred{false, false, false};
    const std::vector<bool> gold_labels{true, false, true};
    const ClassificationMetrics m = classification_metrics(pred, gold_labels);
    CHECK(m.recall == 0.0);
  }
  SECTION("20-sample confusion matrix matches a hand count") {
    // tp=7, fp=3, fn=2, tn=8
    std::vector<bool> pred, gold_labels;
    for (int i = 0; i < 7; ++i) { pred.push_back(true); gold_labels.push_back(true); }
    for (int i = 0; i < 3; ++i) { pred.push_back(true); gold_labels.push_back(false); }
    for (int i = 0; i < 2; ++i) { pred.push_back(false); gold_labels.push_back(true); }
    for (int i = 0; i < 8; ++i) { pred.push_back(false); gold_labels.push_back(false); }
    const ClassificationMetrics m = classification_metrics(pred, gold_labels);
    CHECK(m.tp == 7);
    CHECK(m.fp == 3);
    CHECK(m.fn == 2);
    CHECK(m.tn == 8);
    CHECK_THAT(m.precision, Catch::Matchers::WithinAbs(0.7, 1e-12));
    CHECK_THAT(m.recall, Catch::Matchers::WithinAbs(7.0 / 9.0, 1e-12));
    CHECK_THAT(m.accuracy, Catch::Matchers::WithinAbs(0.75, 1e-12));
    CHECK_THAT(m.f1,
               Catch::Matchers::WithinAbs(2 * 0.7 * (7.0 / 9.0) / (0.7 + 7.0 / 9.0), 1e-12));
  }
}

TEST_CASE("metric ranges hold on random inputs") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<std::vector<std::pair<int, BoundingBox>>> golds(3);
    std::vector<std::vector<Detection>> preds(3);
    for (int im = 0; im < 3; ++im) {
      for (int i = 0; i < 4; ++i) {
        const double x = rng.uniform(0, 80), y = rng.uniform(0, 80);
        golds[im].push_back(gold(static_cast<int>(rng.index(2)), x, y, rng.uniform(5, 15),
                                 rng.uniform(5, 15)));
        preds[im].push_back({{x + rng.uniform(-5, 5), y + rng.uniform(-5, 5),
                              x + rng.uniform(6, 20), y + rng.uniform(6, 20)},
                             static_cast<int>(rng.index(2)), rng.uniform(0, 1)});
      }
    }
    const DetectionMetrics m = evaluate_detections(preds, golds, 0.3, 2);
    CHECK(m.map >= 0.0);
    CHECK(m.map <= 1.0);
    CHECK(m.precision >= 0.0);
    CHECK(m.precision <= 1.0);
    CHECK(m.recall >= 0.0);
    CHECK(m.recall <= 1.0);
    for (const auto& cm : m.per_class) {
      CHECK(cm.ap >= 0.0);
      CHECK(cm.ap <= 1.0);
    }
  }
}
