#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "semd/data.hpp"
#include "test_util.hpp"

using namespace semd;

namespace {

Dataset random_dataset(int n_channels, int n_samples, int n_trials, std::uint64_t seed) {
    Rng rng(seed);
    Dataset ds;
    ds.fs = 500.0;
    ds.subject = 3;
    ds.session = "online";
    ds.montage = default_montage();
    ds.montage.resize(static_cast<std::size_t>(n_channels));
    for (int i = 0; i < n_trials; ++i) {
        Trial t;
        t.data = testutil::rand_tensor<float>({n_channels, n_samples}, rng, -40.0f, 40.0f);
        t.label = i % 2;
        ds.trials.push_back(t);
    }
    return ds;
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

// raw periodogram power of one channel over [lo, hi) summed across DFT bins
// covering [f_lo, f_hi] Hz
double band_power(const Tensor<float>& data, int channel, int lo, int hi, double fs, double f_lo,
                  double f_hi) {
    const int n = hi - lo;
    const int k_lo = static_cast<int>(std::ceil(f_lo * n / fs));
    const int k_hi = static_cast<int>(std::floor(f_hi * n / fs));
    const double two_pi = 2.0 * std::acos(-1.0);
    double total = 0;
    for (int k = k_lo; k <= k_hi; ++k) {
        double re = 0, im = 0;
        for (int t = 0; t < n; ++t) {
            const double v = data.at({channel, lo + t});
            re += v * std::cos(two_pi * k * t / n);
            im -= v * std::sin(two_pi * k * t / n);
        }
        total += re * re + im * im;
    }
    return total;
}

}  // namespace

TEST_CASE("EEGT files round-trip bit-exactly") {
    const Dataset ds = random_dataset(27, 2000, 10, 71);
    write_dataset(ds, "data_test_rt.eegt");
    const Dataset back = read_dataset("data_test_rt.eegt");

    REQUIRE(back.n_trials() == 10);
    CHECK(back.fs == ds.fs);
    CHECK(back.subject == ds.subject);
    CHECK(back.session == ds.session);
    CHECK(back.montage == ds.montage);
    for (int i = 0; i < 10; ++i) {
        CHECK(back.trials[static_cast<std::size_t>(i)].label ==
              ds.trials[static_cast<std::size_t>(i)].label);
        CHECK(back.trials[static_cast<std::size_t>(i)].data.vec() ==
              ds.trials[static_cast<std::size_t>(i)].data.vec());
    }
    std::remove("data_test_rt.eegt");
    std::remove("data_test_rt.eegt.json");
}

TEST_CASE("an empty dataset is a valid EEGT file") {
    Dataset ds;
    ds.fs = 250.0;
    ds.subject = 12;
    ds.session = "calibration";
    ds.montage = default_montage();
    write_dataset(ds, "data_test_empty.eegt");
    const Dataset back = read_dataset("data_test_empty.eegt");
    CHECK(back.n_trials() == 0);
    CHECK(back.fs == 250.0);
    CHECK(back.montage == ds.montage);
    CHECK(back.subject == 12);
    std::remove("data_test_empty.eegt");
    std::remove("data_test_empty.eegt.json");
}

TEST_CASE("corrupt EEGT files fail with distinct errors") {
    const Dataset ds = random_dataset(4, 50, 2, 72);
    write_dataset(ds, "data_test_ok.eegt");
    const std::string bytes = slurp("data_test_ok.eegt");

    CHECK_THROWS_WITH(read_dataset("data_test_nofile.eegt"),
                      Catch::Matchers::ContainsSubstring("cannot open"));

    std::string bad = bytes;
    bad[0] = 'X';
    spit("data_test_bad.eegt", bad);
    CHECK_THROWS_WITH(read_dataset("data_test_bad.eegt"),
                      Catch::Matchers::ContainsSubstring("bad data file magic"));

    bad = bytes;
    bad[4] = 9;
    spit("data_test_bad.eegt", bad);
    CHECK_THROWS_WITH(read_dataset("data_test_bad.eegt"),
                      Catch::Matchers::ContainsSubstring("unsupported data file version 9"));

    spit("data_test_bad.eegt", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_WITH(read_dataset("data_test_bad.eegt"),
                      Catch::Matchers::ContainsSubstring("truncated"));

    bad = bytes;
    bad.push_back('\0');
    spit("data_test_bad.eegt", bad);
    CHECK_THROWS_WITH(read_dataset("data_test_bad.eegt"),
                      Catch::Matchers::ContainsSubstring("trailing bytes"));

    bad = bytes;
    bad[20] = 7;  // first label byte, after the 20-byte header
    spit("data_test_bad.eegt", bad);
    CHECK_THROWS_WITH(read_dataset("data_test_bad.eegt"),
                      Catch::Matchers::ContainsSubstring("label byte"));

    // sidecar problems: missing falls back to defaults, malformed is an error
    spit("data_test_bad.eegt", bytes);
    Dataset no_sidecar = read_dataset("data_test_bad.eegt");
    CHECK(no_sidecar.montage.empty());
    CHECK(no_sidecar.subject == 0);
    spit("data_test_bad.eegt.json", "{nope");
    CHECK_THROWS_WITH(read_dataset("data_test_bad.eegt"),
                      Catch::Matchers::ContainsSubstring("malformed data sidecar"));

    for (const char* p : {"data_test_ok.eegt", "data_test_ok.eegt.json", "data_test_bad.eegt",
                          "data_test_bad.eegt.json"})
        std::remove(p);
}

TEST_CASE("default synthesis matches the session protocol") {
    SynthConfig cfg;
    cfg.n_subjects = 1;
    const SubjectRecording rec = synth_subject(cfg, 1);

    CHECK(rec.calibration.n_trials() == 72);
    CHECK(rec.online.n_trials() == 48);
    CHECK(rec.calibration.session == "calibration");
    CHECK(rec.online.session == "online");
    CHECK(rec.calibration.subject == 1);
    CHECK(rec.calibration.fs == 500.0);
    CHECK(rec.calibration.montage == default_montage());
    REQUIRE(rec.calibration.n_channels() == 27);
    CHECK(rec.calibration.n_samples() == 3000);

    int left = 0;
    for (const Trial& t : rec.calibration.trials) left += t.label == kLabelLeft;
    CHECK(left == 36);
    left = 0;
    for (const Trial& t : rec.online.trials) left += t.label == kLabelLeft;
    CHECK(left == 24);

    for (const Trial& t : rec.calibration.trials) REQUIRE(t.data.all_finite());
}

TEST_CASE("synthesis is seed-deterministic and subject-distinct") {
    SynthConfig cfg;
    cfg.n_subjects = 2;
    cfg.calibration_trials_per_class = 3;
    cfg.online_trials_per_class = 2;

    const auto a = synth_generate(cfg);
    const auto b = synth_generate(cfg);
    REQUIRE(a.size() == 2);
    for (const auto& [id, rec] : a) {
        const SubjectRecording& other = b.at(id);
        REQUIRE(rec.calibration.n_trials() == other.calibration.n_trials());
        for (int i = 0; i < rec.calibration.n_trials(); ++i) {
            CHECK(rec.calibration.trials[static_cast<std::size_t>(i)].data.vec() ==
                  other.calibration.trials[static_cast<std::size_t>(i)].data.vec());
            CHECK(rec.calibration.trials[static_cast<std::size_t>(i)].label ==
                  other.calibration.trials[static_cast<std::size_t>(i)].label);
        }
        for (int i = 0; i < rec.online.n_trials(); ++i)
            CHECK(rec.online.trials[static_cast<std::size_t>(i)].data.vec() ==
                  other.online.trials[static_cast<std::size_t>(i)].data.vec());
    }
    CHECK(a.at(1).calibration.trials[0].data.vec() != a.at(2).calibration.trials[0].data.vec());

    SynthConfig invalid = cfg;
    invalid.mu_ratio = 1.0;
    CHECK_THROWS_WITH(synth_generate(invalid), Catch::Matchers::ContainsSubstring("mu_ratio"));
}

TEST_CASE("spatial mixing is seeded per subject") {
    SynthConfig cfg;
    const Tensor<double> m1 = spatial_mixing(cfg, 1);
    const Tensor<double> m2 = spatial_mixing(cfg, 2);
    REQUIRE(m1.shape() == Shape{27, 27});
    for (int i = 0; i < 27; ++i) CHECK(m1.at({i, i}) == 1.0);
    CHECK(m1.vec() != m2.vec());
    CHECK(spatial_mixing(cfg, 1).vec() == m1.vec());

    SynthConfig pure = cfg;
    pure.mix_strength = 0;
    const Tensor<double> id = spatial_mixing(pure, 5);
    for (int r = 0; r < 27; ++r)
        for (int c = 0; c < 27; ++c) CHECK(id.at({r, c}) == (r == c ? 1.0 : 0.0));
}

TEST_CASE("planted mu asymmetry matches the configured ratio spectrally") {
    SynthConfig cfg;
    cfg.n_subjects = 1;
    cfg.calibration_trials_per_class = 8;
    cfg.online_trials_per_class = 1;
    cfg.noise_amp = 0.02;
    cfg.line_amp = 0.1;
    cfg.mix_strength = 0;  // keep the group structure unmixed for the oracle
    const SubjectRecording rec = synth_subject(cfg, 1);

    const int lo = static_cast<int>(std::lround(cfg.epoch_start_s * cfg.fs));
    const int hi = lo + static_cast<int>(std::lround(cfg.epoch_s * cfg.fs));
    const std::vector<int> left_idx{7, 13, 20};    // FC3, C3, CP1
    const std::vector<int> right_idx{11, 17, 23};  // FC4, C4, CP4

    double ratio_sum[2] = {0, 0};
    int count[2] = {0, 0};
    for (const Trial& t : rec.calibration.trials) {
        double p_left = 0, p_right = 0;
        for (int c : left_idx) p_left += band_power(t.data, c, lo, hi, cfg.fs, 8.0, 12.0);
        for (int c : right_idx) p_right += band_power(t.data, c, lo, hi, cfg.fs, 8.0, 12.0);
        ratio_sum[t.label] += std::sqrt(p_left / p_right);
        ++count[t.label];
    }
    const double left_ratio = ratio_sum[kLabelLeft] / count[kLabelLeft];
    const double right_ratio = ratio_sum[kLabelRight] / count[kLabelRight];

    CHECK(left_ratio > cfg.mu_ratio * 0.8);
    CHECK(left_ratio < cfg.mu_ratio * 1.2);
    CHECK(right_ratio > 1.0 / cfg.mu_ratio * 0.8);
    CHECK(right_ratio < 1.0 / cfg.mu_ratio * 1.2);
}

TEST_CASE("protocol split keeps sessions apart") {
    std::vector<int> subjects;
    for (int i = 1; i <= 20; ++i) subjects.push_back(i);
    const ProtocolSplit split = protocol_split(subjects);
    REQUIRE(split.pool.size() == 7);
    REQUIRE(split.roster.size() == 13);
    CHECK(split.pool.front() == 1);
    CHECK(split.pool.back() == 7);
    CHECK(split.roster.front() == 8);
    CHECK(split.roster.back() == 20);
    for (int p : split.pool)
        for (int r : split.roster) CHECK(p != r);

    const SynthConfig defaults;
    CHECK(static_cast<int>(split.roster.size()) * 2 * defaults.online_trials_per_class == 624);

    CHECK_THROWS_WITH(protocol_split({1}), Catch::Matchers::ContainsSubstring("at least 2"));
}

TEST_CASE("pooling concatenates calibration sessions only") {
    SynthConfig cfg;
    cfg.n_subjects = 3;
    cfg.calibration_trials_per_class = 2;
    cfg.online_trials_per_class = 1;
    auto recs = synth_generate(cfg);

    // clearing the online sessions must not matter: pooling never reads them
    for (auto& [id, rec] : recs) rec.online.trials.clear();
    const Dataset pooled = pool_calibration(recs, {1, 2});
    CHECK(pooled.n_trials() == 8);
    CHECK(pooled.session == "calibration");
    CHECK(pooled.fs == cfg.fs);
    CHECK(pooled.montage == cfg.montage);
    CHECK(pooled.trials[0].data.vec() == recs.at(1).calibration.trials[0].data.vec());

    CHECK_THROWS_WITH(pool_calibration(recs, {1, 9}), Catch::Matchers::ContainsSubstring("no recording"));
    auto bad = recs;
    bad.at(2).calibration.fs = 250.0;
    CHECK_THROWS_WITH(pool_calibration(bad, {1, 2}), Catch::Matchers::ContainsSubstring("rates differ"));
}
