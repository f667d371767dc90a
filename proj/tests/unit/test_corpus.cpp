#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <string>

#include "slg/common.hpp"
#include "slg/corpus.hpp"
#include "slg/corpus_io.hpp"
#include "slg/rng.hpp"

using namespace slg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("slg_corpus_" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("generated sessions have the 6/1/1/5 part structure in order") {
  const auto sessions = generate_corpus(4, 7, GenConfig{});
  REQUIRE(sessions.size() == 4);
  for (const auto& s : sessions) {
    REQUIRE(s.responses.size() == kResponsesPerSession);
    int counts[4] = {0, 0, 0, 0};
    int prev_part = -1, prev_index = -1;
    for (const auto& r : s.responses) {
      const int p = static_cast<int>(r.part);
      counts[p] += 1;
      if (p == prev_part) {
        CHECK(r.index_in_part == prev_index + 1);
      } else {
        CHECK(p > prev_part);
        CHECK(r.index_in_part == 0);
      }
      prev_part = p;
      prev_index = r.index_in_part;
    }
    CHECK(counts[0] == 6);
    CHECK(counts[1] == 1);
    CHECK(counts[2] == 1);
    CHECK(counts[3] == 5);
  }
}

TEST_CASE("labels live on the band grid and overall is the exact mean") {
  const auto sessions = generate_corpus(32, 11, GenConfig{});
  for (const auto& s : sessions) {
    for (int k = 0; k < 4; ++k) {
      const double v = s.labels.component(k);
      CHECK(score_to_band(v).value == v);
    }
    CHECK(s.labels.overall ==
          overall_from_parts(s.labels.p1, s.labels.p3, s.labels.p4, s.labels.p5));
    CHECK(s.mask.any());
  }
}

TEST_CASE("duration and frame count stay consistent") {
  const GenConfig cfg;
  const auto sessions = generate_corpus(8, 3, cfg);
  for (const auto& s : sessions)
    for (const auto& r : s.responses) {
      CHECK(r.features.t_frames >= 1);
      CHECK(std::abs(r.duration_s - r.features.t_frames * cfg.frame_period_s) <=
            cfg.frame_period_s);
      CHECK(r.features.d_feat == static_cast<std::uint32_t>(cfg.d_feat));
      CHECK(r.features.data.size() ==
            static_cast<std::size_t>(r.features.t_frames) * cfg.d_feat);
    }
}

TEST_CASE("zero label noise degenerates to band-quantized proficiency") {
  GenConfig cfg;
  cfg.label_noise = 0.0;
  std::vector<double> thetas;
  const auto sessions = generate_corpus(64, 5, cfg, &thetas);
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const double expect = score_to_band(thetas[i]).value;
    CHECK(sessions[i].labels.p1 == expect);
    CHECK(sessions[i].labels.p3 == expect);
    CHECK(sessions[i].labels.p4 == expect);
    CHECK(sessions[i].labels.p5 == expect);
    CHECK(sessions[i].labels.overall == expect);
  }
}

TEST_CASE("generation rejects invalid arguments") {
  CHECK_THROWS(generate_corpus(0, 1, GenConfig{}));
  GenConfig bad;
  bad.d_feat = 2;
  CHECK_THROWS(generate_corpus(1, 1, bad));
}

TEST_CASE("same seed and config give byte-identical corpora") {
  const auto dir_a = temp_dir("det_a");
  const auto dir_b = temp_dir("det_b");
  write_corpus(generate_corpus(6, 21, GenConfig{}), dir_a);
  write_corpus(generate_corpus(6, 21, GenConfig{}), dir_b);
  CHECK(read_file(dir_a / "manifest.jsonl") == read_file(dir_b / "manifest.jsonl"));
  CHECK(corpus_hash(dir_a) == corpus_hash(dir_b));
  const auto blob = feature_file_name(generate_corpus(6, 21, GenConfig{})[3], 7);
  CHECK(read_file(dir_a / blob) == read_file(dir_b / blob));
  fs::remove_all(dir_a);
  fs::remove_all(dir_b);
}

TEST_CASE("label dropout masks behave as specified") {
  SECTION("p_drop out of range") {
    auto sessions = generate_corpus(2, 1, GenConfig{});
    CHECK_THROWS(apply_label_dropout(sessions, 1.0, 1));
    CHECK_THROWS(apply_label_dropout(sessions, -0.1, 1));
  }
  SECTION("p_drop zero is a no-op") {
    auto sessions = generate_corpus(16, 2, GenConfig{});
    apply_label_dropout(sessions, 0.0, 9);
    for (const auto& s : sessions)
      for (bool b : s.mask.m) CHECK(b);
  }
  SECTION("dropped fraction concentrates and the overall bit follows") {
    auto sessions = generate_corpus(400, 13, GenConfig{});
    apply_label_dropout(sessions, 0.5, 77);
    long dropped = 0, total = 0;
    for (const auto& s : sessions) {
      bool any_part_dropped = false;
      bool any_bit = false;
      for (int k = 0; k < 4; ++k) {
        ++total;
        if (!s.mask.m[static_cast<std::size_t>(k)]) {
          ++dropped;
          any_part_dropped = true;
        }
        any_bit = any_bit || s.mask.m[static_cast<std::size_t>(k)];
      }
      CHECK(any_bit);  // re-roll contract
      CHECK(s.mask.m[4] == !any_part_dropped);
    }
    const double frac = static_cast<double>(dropped) / static_cast<double>(total);
    // re-rolling all-dropped sessions trims the rate slightly below p_drop
    CHECK(frac > 0.40);
    CHECK(frac < 0.55);
  }
}

TEST_CASE("corpus round-trips field for field with bit-exact features") {
  const auto dir = temp_dir("roundtrip");
  auto sessions = generate_corpus(5, 31, GenConfig{});
  apply_label_dropout(sessions, 0.3, 5);
  write_corpus(sessions, dir);
  const auto loaded = read_corpus(dir);
  REQUIRE(loaded.size() == sessions.size());
  for (std::size_t i = 0; i < sessions.size(); ++i) {
    const auto& a = sessions[i];
    const auto& b = loaded[i];
    CHECK(a.session_id == b.session_id);
    for (int k = 0; k < 5; ++k) {
      CHECK(a.labels.component(k) == b.labels.component(k));
      CHECK(a.mask.m[static_cast<std::size_t>(k)] == b.mask.m[static_cast<std::size_t>(k)]);
    }
    REQUIRE(a.responses.size() == b.responses.size());
    for (std::size_t r = 0; r < a.responses.size(); ++r) {
      CHECK(a.responses[r].part == b.responses[r].part);
      CHECK(a.responses[r].index_in_part == b.responses[r].index_in_part);
      CHECK(a.responses[r].prompt_text == b.responses[r].prompt_text);
      CHECK(a.responses[r].duration_s == b.responses[r].duration_s);
      REQUIRE(a.responses[r].features.data.size() ==
              b.responses[r].features.data.size());
      CHECK(std::memcmp(a.responses[r].features.data.data(),
                        b.responses[r].features.data.data(),
                        a.responses[r].features.data.size() * sizeof(float)) == 0);
    }
  }
  fs::remove_all(dir);
}

TEST_CASE("corrupt inputs produce named errors") {
  const auto dir = temp_dir("corrupt");
  const auto sessions = generate_corpus(2, 41, GenConfig{});
  write_corpus(sessions, dir);

  SECTION("unknown part id names the offending line") {
    std::string manifest = read_file(dir / "manifest.jsonl");
    const auto at = manifest.find("\"P3\"");
    REQUIRE(at != std::string::npos);
    manifest.replace(at, 4, "\"P9\"");
    write_file(dir / "manifest.jsonl", manifest);
    try {
      read_corpus(dir);
      FAIL("expected parse error");
    } catch (const std::exception& e) {
      const std::string msg = e.what();
      CHECK(msg.find("line 1") != std::string::npos);
      CHECK(msg.find("P9") != std::string::npos);
    }
  }

  SECTION("truncated feature blob reports a length mismatch") {
    const auto blob_path = dir / feature_file_name(sessions[0], 0);
    std::string bytes = read_file(blob_path);
    bytes.pop_back();
    write_file(blob_path, bytes);
    try {
      read_corpus(dir);
      FAIL("expected length error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("length mismatch") != std::string::npos);
    }
  }

  SECTION("bad magic reports a corrupt header") {
    const auto blob_path = dir / feature_file_name(sessions[0], 0);
    std::string bytes = read_file(blob_path);
    bytes[0] = 'X';
    write_file(blob_path, bytes);
    try {
      read_corpus(dir);
      FAIL("expected header error");
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
    }
  }

  SECTION("missing blob file is reported") {
    fs::remove(dir / feature_file_name(sessions[1], 3));
    CHECK_THROWS_WITH(read_corpus(dir),
                      Catch::Matchers::ContainsSubstring("missing feature blob"));
  }

  SECTION("manifest dims overriding the blob header are a dimension mismatch") {
    std::string manifest = read_file(dir / "manifest.jsonl");
    const auto at = manifest.find("\"d_feat\":16");
    REQUIRE(at != std::string::npos);
    manifest.replace(at, 11, "\"d_feat\":12");
    write_file(dir / "manifest.jsonl", manifest);
    CHECK_THROWS_WITH(read_corpus(dir),
                      Catch::Matchers::ContainsSubstring("dimension mismatch"));
  }
  fs::remove_all(dir);
}

TEST_CASE("proficiency is linearly recoverable from the delivery channel") {
  std::vector<double> thetas;
  const auto sessions = generate_corpus(1000, 97, GenConfig{}, &thetas);
  std::vector<double> xs;
  for (const auto& s : sessions) {
    double sum = 0.0;
    long n = 0;
    for (const auto& r : s.responses) {
      for (std::uint32_t t = 0; t < r.features.t_frames; ++t) {
        sum += r.features.frame(t)[0];
        ++n;
      }
    }
    xs.push_back(sum / static_cast<double>(n));
  }
  // single-regressor OLS fit quality == Pearson correlation
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    mx += xs[i];
    my += thetas[i];
  }
  mx /= xs.size();
  my /= xs.size();
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxy += (xs[i] - mx) * (thetas[i] - my);
    sxx += (xs[i] - mx) * (xs[i] - mx);
    syy += (thetas[i] - my) * (thetas[i] - my);
  }
  const double corr = sxy / std::sqrt(sxx * syy);
  INFO("correlation " << corr);
  CHECK(corr >= 0.9);
}

TEST_CASE("analytic noise floor matches simulation") {
  const GenConfig cfg;
  const NoiseFloor floor = noise_floor(cfg);
  CHECK(floor.overall == floor.per_part / 2.0);

  // Monte-Carlo oracle: average conditional variance of the quantizer output.
  Rng rng(1234);
  const int n_centers = 2000, n_draws = 400;
  double acc = 0.0;
  for (int i = 0; i < n_centers; ++i) {
    const double c = rng.uniform(kScaleMin, kScaleMax);
    double sum = 0.0, ss = 0.0;
    for (int j = 0; j < n_draws; ++j) {
      const double q = score_to_band(c + cfg.label_noise * rng.gaussian()).value;
      sum += q;
      ss += q * q;
    }
    const double mean = sum / n_draws;
    acc += ss / n_draws - mean * mean;
  }
  const double mc_floor = std::sqrt(acc / n_centers);
  INFO("analytic " << floor.per_part << " vs mc " << mc_floor);
  CHECK(std::abs(floor.per_part - mc_floor) < 0.01);

  GenConfig noiseless;
  noiseless.label_noise = 0.0;
  CHECK(noise_floor(noiseless).per_part == 0.0);
}
