#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "abdmri/assembly.hpp"
#include "abdmri/bias.hpp"
#include "abdmri/phantom.hpp"
#include "abdmri/resample.hpp"
#include "abdmri/rng.hpp"

using namespace abdmri;

namespace {

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
    const double n = double(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (a[i] - ma) * (b[i] - mb);
        saa += (a[i] - ma) * (a[i] - ma);
        sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// constant-intensity cylinder corrupted by a smooth multiplicative gain
struct GainScene {
    Volume corrupted;
    Mask3 mask;
    std::vector<double> gain;  // inside mask, voxel order
};

GainScene make_gain_scene(bool apply_gain) {
    const Geometry g = Geometry::axis_aligned({48, 48, 48}, {4, 4, 4}, {-94, -94, -94});
    GainScene scene;
    scene.corrupted = Volume::scalar(g);
    scene.mask.assign(g.nvox(), 0);
    std::size_t p = 0;
    for (int k = 0; k < 48; ++k)
        for (int j = 0; j < 48; ++j)
            for (int i = 0; i < 48; ++i, ++p) {
                const Vec3 w = g.voxel_to_world({double(i), double(j), double(k)});
                if (w[0] * w[0] + w[1] * w[1] > 80.0 * 80.0) continue;
                scene.mask[p] = 1;
                const double gain =
                    apply_gain ? 1.0 + 0.12 * (w[0] / 94.0) + 0.08 * (w[1] / 94.0) - 0.10 * (w[2] / 94.0) : 1.0;
                scene.corrupted.real[0][p] = static_cast<float>(100.0 * gain);
                scene.gain.push_back(gain);
            }
    return scene;
}

double cov_inside(const std::vector<float>& v, const Mask3& mask) {
    double mean = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) {
            mean += v[i];
            ++n;
        }
    mean /= double(n);
    double var = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        if (mask[i]) var += (v[i] - mean) * (v[i] - mean);
    return std::sqrt(var / double(n)) / mean;
}

}  // namespace

TEST_CASE("blend weights: single overlap slice splits evenly") {
    const std::vector<double> w = blend_weights(1);
    REQUIRE(w.size() == 1);
    REQUIRE(w[0] == Catch::Approx(0.5));
}

TEST_CASE("blend weights: three slices hit the cosine at 0, pi/2, pi") {
    const std::vector<double> w = blend_weights(3);
    REQUIRE(w[0] == Catch::Approx(1.0));
    REQUIRE(w[1] == Catch::Approx(0.5));
    REQUIRE(w[2] == Catch::Approx(0.0).margin(1e-12));
}

TEST_CASE("blend weights are complementary for any overlap length") {
    for (const int n : {1, 2, 3, 5, 8, 13, 40}) {
        const std::vector<double> w = blend_weights(n);
        for (int k = 0; k < n; ++k) {
            REQUIRE(w[std::size_t(k)] >= 0.0);
            REQUIRE(w[std::size_t(k)] <= 1.0);
            REQUIRE(w[std::size_t(k)] + w[std::size_t(n - 1 - k)] == Catch::Approx(1.0));
            if (k > 0) REQUIRE(w[std::size_t(k)] <= w[std::size_t(k - 1)] + 1e-12);
        }
    }
}

TEST_CASE("bias estimation returns a unit field on an unbiased volume") {
    const GainScene scene = make_gain_scene(false);
    const BiasField field = estimate_bias_field(scene.corrupted, scene.mask);
    for (std::size_t i = 0; i < scene.mask.size(); ++i)
        if (scene.mask[i]) REQUIRE(field.field.real[0][i] == Catch::Approx(1.0).margin(1e-2));
}

TEST_CASE("bias estimation recovers a known smooth gain and flattens the volume") {
    const GainScene scene = make_gain_scene(true);
    const BiasField field = estimate_bias_field(scene.corrupted, scene.mask);

    std::vector<double> recovered;
    for (std::size_t i = 0; i < scene.mask.size(); ++i)
        if (scene.mask[i]) recovered.push_back(field.field.real[0][i]);
    REQUIRE(pearson(recovered, scene.gain) >= 0.98);

    // geometric mean one inside the mask
    double lsum = 0;
    for (const double f : recovered) lsum += std::log(f);
    REQUIRE(std::exp(lsum / double(recovered.size())) == Catch::Approx(1.0).margin(1e-3));

    const Volume corrected = apply_bias_field(scene.corrupted, field);
    const double cov_before = cov_inside(scene.corrupted.real[0], scene.mask);
    const double cov_after = cov_inside(corrected.real[0], scene.mask);
    REQUIRE(cov_before / cov_after >= 5.0);
}

TEST_CASE("bias estimation rejects an empty mask") {
    const GainScene scene = make_gain_scene(false);
    try {
        estimate_bias_field(scene.corrupted, Mask3(scene.corrupted.nvox(), 0));
        FAIL("expected EmptyMask");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::empty_mask);
    }
}

TEST_CASE("applying a bias field divides inside the mask and leaves the outside alone") {
    const Geometry g = Geometry::axis_aligned({4, 4, 4}, {1, 1, 1}, {0, 0, 0});
    Volume vol = Volume::scalar(g, ElementKind::float32, "data", 10.0f);
    BiasField field;
    field.field = Volume::scalar(g, ElementKind::float32, "bias", 2.0f);
    field.mask.assign(g.nvox(), 0);
    for (std::size_t i = 0; i < g.nvox() / 2; ++i) field.mask[i] = 1;
    const Volume out = apply_bias_field(vol, field);
    for (std::size_t i = 0; i < g.nvox(); ++i)
        REQUIRE(out.real[0][i] == (field.mask[i] ? 5.0f : 10.0f));

    BiasField unit;
    unit.field = Volume::scalar(g, ElementKind::float32, "bias", 1.0f);
    unit.mask.assign(g.nvox(), 1);
    const Volume same = apply_bias_field(vol, unit);
    REQUIRE(same.real[0] == vol.real[0]);

    BiasField wrong = unit;
    wrong.field.geom = Geometry::axis_aligned({2, 2, 2}, {1, 1, 1}, {0, 0, 0});
    wrong.field.real[0].resize(8);
    wrong.mask.resize(8);
    try {
        const Volume v2 = apply_bias_field(vol, wrong);
        FAIL("expected GeometryMismatch");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::geometry_mismatch);
    }
}

TEST_CASE("the same per-series field applies to every channel, preserving ratios") {
    const GainScene scene = make_gain_scene(true);
    const BiasField field = estimate_bias_field(scene.corrupted, scene.mask);
    Volume fat = scene.corrupted;
    for (auto& x : fat.real[0]) x *= 0.3f;
    const Volume cin = apply_bias_field(scene.corrupted, field);
    const Volume cfat = apply_bias_field(fat, field);
    for (std::size_t i = 0; i < scene.mask.size(); ++i)
        if (scene.mask[i] && cin.real[0][i] > 1.0f)
            REQUIRE(cfat.real[0][i] / cin.real[0][i] == Catch::Approx(0.3).margin(1e-4));
}

TEST_CASE("uniform cylinder assembles to the fixed grid without seams") {
    auto [subject, truth] = phantom::make_dixon_phantom(phantom::uniform_cylinder_config(41));

    // adjacent stations overlap by the configured depth
    for (int s = 0; s + 1 < 6; ++s) {
        const double ov = z_overlap_mm(subject.series[std::size_t(s)].geometry(),
                                       subject.series[std::size_t(s) + 1].geometry());
        REQUIRE(ov == Catch::Approx(truth.overlap_mm[std::size_t(s)]).margin(1e-6));
    }

    const AssembledVolume assembled = assemble(subject);
    REQUIRE(assembled.channels.geom.dims == protocol::kAssembledDims);

    // provenance: weights sum to one, at most two stations per slice
    for (const SliceProvenance& p : assembled.provenance) {
        REQUIRE(p.count >= 1);
        REQUIRE(p.count <= 2);
        double sum = 0;
        for (int e = 0; e < p.count; ++e) sum += p.weight[std::size_t(e)];
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-12));
    }

    // seamlessness: body-mean jump between adjacent slices under 2%
    const Geometry& g = assembled.channels.geom;
    const auto& in = assembled.channel("in");
    std::vector<double> slice_mean(std::size_t(g.dims[2]), 0.0);
    double body_mean = 0.0;
    std::size_t body_n = 0;
    for (int k = 0; k < g.dims[2]; ++k) {
        double sum = 0;
        std::size_t n = 0;
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const float v = in[g.index(i, j, k)];
                if (v > 100.0f) {
                    sum += v;
                    ++n;
                }
            }
        REQUIRE(n > 0);
        slice_mean[std::size_t(k)] = sum / double(n);
        body_mean += sum;
        body_n += n;
    }
    body_mean /= double(body_n);
    double max_jump = 0.0;
    for (int k = 0; k + 1 < g.dims[2]; ++k)
        max_jump = std::max(max_jump, std::abs(slice_mean[std::size_t(k + 1)] - slice_mean[std::size_t(k)]));
    REQUIRE(max_jump / body_mean < 0.02);
}

TEST_CASE("assembly is invariant to input series order") {
    phantom::PhantomConfig cfg = phantom::uniform_cylinder_config(42);
    auto [subject, truth] = phantom::make_dixon_phantom(cfg);
    const AssembledVolume a = assemble(subject);

    DixonSubject shuffled = subject;
    std::swap(shuffled.series[0], shuffled.series[4]);
    std::swap(shuffled.series[1], shuffled.series[3]);
    std::swap(shuffled.series[2], shuffled.series[5]);
    const AssembledVolume b = assemble(shuffled);

    REQUIRE(a.channels.real[0] == b.channels.real[0]);
    REQUIRE(a.channels.real[3] == b.channels.real[3]);
}

TEST_CASE("a five-series subject is rejected as missing a series") {
    auto [subject, truth] = phantom::make_dixon_phantom(phantom::uniform_cylinder_config(43));
    subject.series.erase(subject.series.begin() + 3);
    try {
        assemble(subject);
        FAIL("expected MissingSeries");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::missing_series);
    }
}

TEST_CASE("a series without its water channel is rejected as missing a channel") {
    auto [subject, truth] = phantom::make_dixon_phantom(phantom::uniform_cylinder_config(44));
    subject.series[1].water.reset();
    try {
        assemble(subject);
        FAIL("expected MissingChannel");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::missing_channel);
    }
}

TEST_CASE("disjoint adjacent series are rejected") {
    auto [subject, truth] = phantom::make_dixon_phantom(phantom::uniform_cylinder_config(45));
    // push station 6 far below station 5
    for (int c = 0; c < 4; ++c) subject.series[5].channel(c)->geom.affine.at(2, 3) -= 500.0;
    try {
        assemble(subject);
        FAIL("expected NoOverlap");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::no_overlap);
    }
}
