#include <catch2/catch_amalgamated.hpp>

#include "abdmri/phantom.hpp"
#include "abdmri/swap.hpp"

using namespace abdmri;

namespace {

phantom::PhantomConfig base_config(std::uint64_t seed) {
    phantom::PhantomConfig cfg = phantom::default_config(seed);
    cfg.liver_ideal = cfg.pancreas_gre = cfg.t1w = false;
    return cfg;
}

}  // namespace

TEST_CASE("prepare_slice crops 32 voxels from each lateral edge of a 224-wide slice") {
    auto [subject, truth] = phantom::make_dixon_phantom(base_config(11));
    const SwapSlicePair pair = prepare_slice(*subject.series[1].fat, *subject.series[1].water);
    REQUIRE(pair.fat.nx == 224 - 64);
    REQUIRE(pair.water.nx == 224 - 64);
    REQUIRE(pair.fat.ny == subject.series[1].fat->geom.dims[2]);

    // jointly normalized to [0, 1]
    float m = 0.0f;
    for (const float v : pair.fat.v) m = std::max(m, v);
    for (const float v : pair.water.v) m = std::max(m, v);
    REQUIRE(m <= 1.0f);
    REQUIRE(m >= 0.5f);
}

TEST_CASE("prepare_slice picks the coronal slice at the body centre") {
    auto [subject, truth] = phantom::make_dixon_phantom(base_config(12));
    // body is centred at y = 0; series 2 has 174 rows at 2.232 mm, centre 86.5
    const SwapSlicePair pair = prepare_slice(*subject.series[1].fat, *subject.series[1].water);
    REQUIRE(pair.coronal_index >= 85);
    REQUIRE(pair.coronal_index <= 88);
}

TEST_CASE("prepare_slice rejects an empty series") {
    auto [subject, truth] = phantom::make_dixon_phantom(base_config(13));
    Volume zero_fat = *subject.series[0].fat;
    Volume zero_water = *subject.series[0].water;
    std::fill(zero_fat.real[0].begin(), zero_fat.real[0].end(), 0.0f);
    std::fill(zero_water.real[0].begin(), zero_water.real[0].end(), 0.0f);
    try {
        prepare_slice(zero_fat, zero_water);
        FAIL("expected DegenerateProfile");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::degenerate_profile);
    }
}

TEST_CASE("a subject always yields exactly eight checks with the fixed region layout") {
    auto [subject, truth] = phantom::make_dixon_phantom(base_config(14));
    const SwapReport report = run_swap_checks(subject);
    REQUIRE(report.checks.size() == 8);
    const std::vector<std::pair<int, SwapRegion>> expected = {
        {1, SwapRegion::whole},      {2, SwapRegion::whole},      {3, SwapRegion::whole},
        {4, SwapRegion::whole},      {5, SwapRegion::left_half},  {5, SwapRegion::right_half},
        {6, SwapRegion::left_half},  {6, SwapRegion::right_half},
    };
    for (std::size_t c = 0; c < 8; ++c) {
        REQUIRE(report.checks[c].series == expected[c].first);
        REQUIRE(report.checks[c].region == expected[c].second);
    }
}

TEST_CASE("clean series classify as water_correct with confident scores") {
    auto [subject, truth] = phantom::make_dixon_phantom(base_config(15));
    const SwapReport report = run_swap_checks(subject);
    for (const SwapCheck& c : report.checks) {
        INFO("series " << c.series << " region " << to_string(c.region) << " score " << c.score);
        REQUIRE(c.label == SwapLabel::water_correct);
        REQUIRE(c.score > 0.9);
    }
}

TEST_CASE("a whole-series swap flips exactly that check") {
    phantom::PhantomConfig cfg = base_config(16);
    cfg.defects.push_back(phantom::make_swap_defect(2));
    auto [subject, truth] = phantom::make_dixon_phantom(cfg);
    const SwapReport report = run_swap_checks(subject);
    for (const SwapCheck& c : report.checks) {
        if (c.series == 2)
            REQUIRE(c.label == SwapLabel::swapped);
        else
            REQUIRE(c.label == SwapLabel::water_correct);
    }
}

TEST_CASE("a left-leg swap flags only the left half of station 5") {
    phantom::PhantomConfig cfg = base_config(17);
    cfg.defects.push_back(phantom::make_swap_defect(5, SwapRegion::left_half));
    auto [subject, truth] = phantom::make_dixon_phantom(cfg);
    const SwapReport report = run_swap_checks(subject);
    for (const SwapCheck& c : report.checks) {
        const bool should_swap = c.series == 5 && c.region == SwapRegion::left_half;
        INFO("series " << c.series << " region " << to_string(c.region) << " score " << c.score);
        REQUIRE(c.label == (should_swap ? SwapLabel::swapped : SwapLabel::water_correct));
    }
}

TEST_CASE("the classifier is equivariant under exchanging its inputs") {
    auto [subject, truth] = phantom::make_dixon_phantom(base_config(18));
    for (const std::size_t s : {std::size_t(0), std::size_t(3), std::size_t(5)}) {
        const SwapSlicePair pair = prepare_slice(*subject.series[s].fat, *subject.series[s].water);
        const SwapCheck fw = classify_swap(pair.fat, pair.water, SwapRegion::whole);
        const SwapCheck wf = classify_swap(pair.water, pair.fat, SwapRegion::whole);
        REQUIRE(fw.label == SwapLabel::water_correct);
        REQUIRE(wf.label == SwapLabel::swapped);
        REQUIRE(fw.score + wf.score == Catch::Approx(1.0).margin(1e-9));
    }
}

TEST_CASE("correction exchanges the flagged arrays and is an involution") {
    phantom::PhantomConfig cfg = base_config(19);
    cfg.defects.push_back(phantom::make_swap_defect(3));
    cfg.defects.push_back(phantom::make_swap_defect(6, SwapRegion::right_half));
    auto [subject, truth] = phantom::make_dixon_phantom(cfg);

    SwapReport report = run_swap_checks(subject);
    int flagged = 0;
    for (const SwapCheck& c : report.checks) flagged += c.label == SwapLabel::swapped ? 1 : 0;
    REQUIRE(flagged == 2);

    const DixonSubject corrected = correct_swaps(subject, report);
    REQUIRE(report.corrected[2]);  // station 3, whole

    // corrected data classify clean
    const SwapReport after = run_swap_checks(corrected);
    for (const SwapCheck& c : after.checks) REQUIRE(c.label == SwapLabel::water_correct);

    // involution: applying the same report twice restores the input
    const DixonSubject restored = correct_swaps(corrected, report);
    for (std::size_t s = 0; s < 6; ++s) {
        REQUIRE(restored.series[s].fat->real[0] == subject.series[s].fat->real[0]);
        REQUIRE(restored.series[s].water->real[0] == subject.series[s].water->real[0]);
    }
}

TEST_CASE("a no-swap report leaves the subject untouched") {
    auto [subject, truth] = phantom::make_dixon_phantom(base_config(20));
    SwapReport report = run_swap_checks(subject);
    const DixonSubject out = correct_swaps(subject, report);
    for (std::size_t s = 0; s < 6; ++s) {
        REQUIRE(out.series[s].fat->real[0] == subject.series[s].fat->real[0]);
        REQUIRE(out.series[s].water->real[0] == subject.series[s].water->real[0]);
    }
}

TEST_CASE("a twenty-subject suite with injected swaps detects all and only the injections") {
    Rng rng(2024);
    int checks_total = 0, injected_total = 0, detected_true = 0, false_positives = 0;
    for (int subj = 0; subj < 20; ++subj) {
        phantom::PhantomConfig cfg = base_config(1000 + std::uint64_t(subj));
        phantom::vary_anatomy(cfg, rng);
        std::vector<std::pair<int, SwapRegion>> injectable = {
            {1, SwapRegion::whole},     {2, SwapRegion::whole},      {3, SwapRegion::whole},
            {4, SwapRegion::whole},     {5, SwapRegion::left_half},  {5, SwapRegion::right_half},
            {6, SwapRegion::left_half}, {6, SwapRegion::right_half},
        };
        std::vector<bool> injected(8, false);
        for (std::size_t c = 0; c < 8; ++c)
            if (rng.bernoulli(0.2)) {
                injected[c] = true;
                cfg.defects.push_back(phantom::make_swap_defect(injectable[c].first, injectable[c].second));
            }
        auto [subject, truth] = phantom::make_dixon_phantom(cfg);
        const SwapReport report = run_swap_checks(subject);
        for (std::size_t c = 0; c < 8; ++c) {
            ++checks_total;
            const bool flagged = report.checks[c].label == SwapLabel::swapped;
            if (injected[c]) {
                ++injected_total;
                if (flagged) ++detected_true;
            } else if (flagged) {
                ++false_positives;
            }
        }
    }
    REQUIRE(checks_total == 160);
    REQUIRE(injected_total > 0);
    REQUIRE(detected_true == injected_total);  // sensitivity 1.0
    REQUIRE(false_positives == 0);
}
