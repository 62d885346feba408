#include "sslgcil/augment.hpp"

#include <catch_amalgamated.hpp>

#include <map>

using namespace sslgcil;
using Catch::Approx;

namespace {

// Feature whose every segment is a narrow bump at `pos` with height `amp`.
GccFeature bump(int pos, double amp, int pairs = 6, int bins = 51) {
  GccFeature f(pairs, bins);
  for (int k = 0; k < pairs; ++k) {
    auto seg = f.segment(k);
    for (int i = 0; i < bins; ++i) seg[i] = amp * std::exp(-0.5 * (i - pos) * (i - pos));
  }
  return f;
}

std::vector<LabeledSample> task_with_counts(const std::map<int, int>& counts) {
  std::vector<LabeledSample> out;
  for (const auto& [cls, n] : counts)
    for (int i = 0; i < n; ++i) out.push_back({bump(5 + cls % 40, 0.9), cls});
  return out;
}

std::map<int, int> count(const std::vector<LabeledSample>& v) {
  std::map<int, int> m;
  for (const auto& s : v) ++m[s.doa_deg];
  return m;
}

}  // namespace

TEST_CASE("peak statistics", "[augment]") {
  GccFeature a(1, 51), b(1, 51);
  a.segment(0)[30] = 0.8;
  b.segment(0)[32] = 0.6;
  const auto stats = peak_stats({{a, 7}, {b, 7}, {a, 9}}, 1, 51);
  const auto& c7 = stats.classes.at(7);
  CHECK(c7.count == 2);
  CHECK(c7.mean_pos[0] == 31.0);
  CHECK(c7.std_pos[0] == 1.0);
  CHECK(c7.mean_amp[0] == Approx(0.7));
  CHECK(c7.std_amp[0] == Approx(0.1));
  const auto& c9 = stats.classes.at(9);
  CHECK(c9.std_pos[0] == 0.0);
  CHECK(c9.std_amp[0] == 0.0);
  CHECK_THROWS_AS(peak_stats({}, 1, 51), std::invalid_argument);
}

TEST_CASE("peak statistics of a simulated class follow the geometry", "[augment]") {
  const auto g = ArrayGeometry::square();
  const double doa = 40.0;
  Rng rng(2);
  std::vector<LabeledSample> data;
  for (int i = 0; i < 100; ++i) data.push_back({extract_features(synth_frame(g, doa, std::nullopt, 4096, rng), g), 40});
  const auto stats = peak_stats(data, 6, 51);
  for (int k = 0; k < 6; ++k) {
    const double lag = pair_tdoa(g, k, doa) * g.sample_rate();
    CHECK(std::abs(stats.classes.at(40).mean_pos[k] - (lag + 25.0)) <= 0.5);
  }
}

TEST_CASE("plan deficits and donors", "[augment]") {
  auto stats_for = [](const std::map<int, int>& counts) { return peak_stats(task_with_counts(counts), 6, 51); };

  SECTION("hand example") {
    const auto p = plan(stats_for({{10, 500}, {20, 100}, {40, 300}}), 0.5);
    CHECK(p.max_count == 500);
    REQUIRE(p.entries.size() == 1);
    CHECK(p.entries[0].cls == 20);
    CHECK(p.entries[0].deficit == 150);  // ceil(250 - 100)
    CHECK(p.entries[0].donor == 10);     // 10 deg away vs 20
  }
  SECTION("threshold is inclusive") {
    CHECK(plan(stats_for({{0, 500}, {1, 250}}), 0.5).entries.empty());
  }
  SECTION("balanced input") {
    CHECK(plan(stats_for({{0, 30}, {100, 30}, {200, 30}}), 0.5).entries.empty());
  }
  SECTION("ties go to the smaller class and distance wraps") {
    auto p = plan(stats_for({{10, 100}, {20, 3}, {30, 100}}), 0.5);
    REQUIRE(p.entries.size() == 1);
    CHECK(p.entries[0].donor == 10);
    p = plan(stats_for({{5, 100}, {340, 100}, {355, 2}}), 0.5);
    REQUIRE(p.entries.size() == 1);
    CHECK(p.entries[0].donor == 5);
    CHECK(p.low_support == std::vector<int>{355});
  }
  SECTION("fractional threshold rounds the deficit up") {
    const auto p = plan(stats_for({{0, 101}, {90, 20}}), 0.5);
    REQUIRE(p.entries.size() == 1);
    CHECK(p.entries[0].deficit == 31);  // ceil(50.5 - 20)
  }
  CHECK_THROWS_AS(plan(stats_for({{0, 1}}), 0.0), std::invalid_argument);
  CHECK_THROWS_AS(plan(stats_for({{0, 1}}), 1.5), std::invalid_argument);
}

TEST_CASE("augment_sample shift and scale", "[augment]") {
  const GccFeature base = bump(20, 0.9, 2, 51);
  const std::vector<double> donor_pos{20.0, 20.0};
  Rng rng(1);

  const std::vector<SegmentTarget> target{{25.0, 0.8}, {3.4, 0.5}};
  const auto out = augment_sample(base, target, donor_pos, rng, 0.0);
  CHECK(argmax(out.segment(0)) == 25);
  CHECK(argmax(out.segment(1)) == 3);
  CHECK(*std::max_element(out.segment(0).begin(), out.segment(0).end()) == Approx(0.8).margin(1e-9));
  CHECK(*std::max_element(out.segment(1).begin(), out.segment(1).end()) == Approx(0.5).margin(1e-9));
  // cyclic: the value 20 bins before the old peak moved with it
  CHECK(out.segment(1)[(3 - 17 + 51) % 51] == Approx(base.segment(1)[3] * 0.5 / 0.9).margin(1e-12));

  const GccFeature flat(2, 51);
  const auto zero = augment_sample(flat, target, donor_pos, rng, 0.0);
  for (double v : zero.values()) CHECK(v == 0.0);

  const std::vector<SegmentTarget> short_target{{25.0, 0.8}};
  CHECK_THROWS_AS(augment_sample(base, short_target, donor_pos, rng), std::invalid_argument);
}

TEST_CASE("augment_sample keeps peaks under noise", "[augment]") {
  const auto g = ArrayGeometry::square();
  Rng rng(8);
  const auto base = extract_features(synth_frame(g, 10.0, std::nullopt, 4096, rng), g);
  std::vector<double> donor_pos;
  for (int k = 0; k < 6; ++k) donor_pos.push_back(argmax(base.segment(k)));
  const std::vector<SegmentTarget> target{{30.2, 0.9}, {12.0, 0.7}, {25.0, 1.0}, {40.6, 0.8}, {5.0, 0.95}, {49.0, 0.6}};
  int good = 0, total = 0;
  for (int draw = 0; draw < 1000; ++draw) {
    const auto out = augment_sample(base, target, donor_pos, rng);
    for (double v : out.values()) REQUIRE(std::abs(v) <= 1.0);
    for (int k = 0; k < 6; ++k) {
      ++total;
      if (std::abs(argmax(out.segment(k)) - target[k].pos) <= 1.0) ++good;
    }
  }
  CHECK(good >= 0.95 * total);
}

TEST_CASE("augment_task", "[augment]") {
  SECTION("balanced input is unchanged") {
    const auto data = task_with_counts({{0, 20}, {50, 20}});
    Rng rng(1);
    const auto r = augment_task(data, 0.5, rng);
    CHECK(r.samples == data);
    CHECK(r.generated == 0);
  }
  SECTION("counts reach the threshold, originals untouched") {
    const auto data = task_with_counts({{0, 500}, {12, 100}});
    Rng rng(1);
    const auto r = augment_task(data, 0.5, rng);
    const auto c = count(r.samples);
    CHECK(c.at(0) == 500);
    CHECK(c.at(12) == 250);
    CHECK(r.generated == 150);
    REQUIRE(r.samples.size() == 750);
    CHECK(std::equal(data.begin(), data.end(), r.samples.begin()));
    for (const auto& s : r.samples)
      for (double v : s.feature.values()) CHECK(std::abs(v) <= 1.0);
  }
  SECTION("deterministic per seed") {
    const auto data = task_with_counts({{0, 200}, {30, 10}, {60, 4}, {90, 80}});
    Rng a(42), b(42), c(43);
    const auto ra = augment_task(data, 0.5, a);
    CHECK(ra.samples == augment_task(data, 0.5, b).samples);
    CHECK_FALSE(ra.samples == augment_task(data, 0.5, c).samples);
  }
  SECTION("empty input") {
    Rng rng(1);
    CHECK(augment_task({}, 0.5, rng).samples.empty());
  }
}
