#include <catch2/catch_amalgamated.hpp>

#include <algorithm>

#include "abdmri/anomaly.hpp"
#include "abdmri/assembly.hpp"
#include "abdmri/phantom.hpp"

using namespace abdmri;

namespace {

// rectangular body with a ledge cut of horizontal extent `width` on its +x
// edge; the canonical shape behind the 10/25 run-length contract
Mask2 ledge_mask(int width) {
    Mask2 mask(160, 300, 0);
    for (int z = 0; z < 300; ++z)
        for (int x = 10; x <= 110; ++x) mask.at(x, z) = 1;
    for (int z = 140; z < 155; ++z)
        for (int x = 110 - width + 1; x <= 110; ++x) mask.at(x, z) = 0;
    return mask;
}

int max_horizontal_run(const Mask2& mask, const AnomalyConfig& cfg = {}) {
    Image2 img(mask.nx, mask.ny);
    for (std::size_t i = 0; i < img.v.size(); ++i) img.v[i] = mask.v[i] ? 1.0f : 0.0f;
    const Mask2 edges = canny_edges(img, cfg.canny_low_frac, cfg.canny_high_frac, cfg.canny_sigma);
    const Mask2 zone = erode_2d(fill_holes_2d(mask), cfg.interior_margin);
    int longest = 0;
    for (const HorizontalRun& r : horizontal_runs(edges, zone)) longest = std::max(longest, r.length);
    return longest;
}

AnomalyConfig fast_cfg() { return {}; }

}  // namespace

TEST_CASE("body mask of a phantom cylinder matches the analytic truth") {
    auto [subject, truth] = phantom::make_dixon_phantom(phantom::uniform_cylinder_config(31));
    const AssembledVolume assembled = assemble(subject);
    const BodyMask body = body_mask(extract_channel(assembled.channels, "in"));

    const Mask3 oracle = phantom::body_mask_on(truth.anatomy, assembled.channels.geom);
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < oracle.size(); ++i) {
        inter += (body.mask[i] && oracle[i]) ? 1u : 0u;
        a += body.mask[i];
        b += oracle[i];
    }
    const double dice = 2.0 * double(inter) / double(a + b);
    INFO("dice " << dice);
    REQUIRE(dice >= 0.98);
}

TEST_CASE("body mask rejects an empty volume") {
    const Volume zero = Volume::scalar(Geometry::axis_aligned({16, 16, 16}, {2, 2, 2}, {0, 0, 0}));
    try {
        body_mask(zero);
        FAIL("expected EmptyBody");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::empty_body);
    }
}

TEST_CASE("body mask keeps only the largest connected component") {
    const Geometry g = Geometry::axis_aligned({60, 30, 30}, {2, 2, 2}, {0, 0, 0});
    Volume v = Volume::scalar(g);
    // big blob on the left, small one on the right
    for (int k = 5; k < 25; ++k)
        for (int j = 5; j < 25; ++j)
            for (int i = 5; i < 25; ++i) v.real[0][g.index(i, j, k)] = 100.0f;
    for (int k = 12; k < 16; ++k)
        for (int j = 12; j < 16; ++j)
            for (int i = 40; i < 44; ++i) v.real[0][g.index(i, j, k)] = 100.0f;
    const BodyMask body = body_mask(v);
    REQUIRE(body.component_count_prior_to_selection >= 2);
    for (int k = 12; k < 16; ++k)
        for (int j = 12; j < 16; ++j)
            for (int i = 40; i < 44; ++i) REQUIRE(body.mask[g.index(i, j, k)] == 0);
    REQUIRE(body.mask[g.index(15, 15, 15)] == 1);
}

TEST_CASE("canny returns no edges on a constant image") {
    Image2 img(64, 64, 3.5f);
    const Mask2 edges = canny_edges(img, 0.1, 0.2, 1.2);
    for (const auto e : edges.v) REQUIRE(e == 0);
}

TEST_CASE("canny marks a vertical step as a one-pixel vertical line") {
    Image2 img(64, 64, 0.0f);
    for (int y = 0; y < 64; ++y)
        for (int x = 32; x < 64; ++x) img.at(x, y) = 1.0f;
    const Mask2 edges = canny_edges(img, 0.1, 0.2, 1.2);
    for (int y = 2; y < 62; ++y) {
        int count = 0;
        for (int x = 0; x < 64; ++x) count += edges.at(x, y);
        REQUIRE(count == 1);
        REQUIRE(edges.at(31, y) + edges.at(32, y) == 1);
    }
}

TEST_CASE("measured horizontal runs track the injected ledge width within one voxel") {
    for (const int width : {8, 9, 10, 12, 16, 20, 26, 30}) {
        const int run = max_horizontal_run(ledge_mask(width));
        INFO("width " << width << " measured " << run);
        REQUIRE(run >= width - 1);
        REQUIRE(run <= width + 1);
    }
    // a clean rectangle has no horizontal features at all
    Mask2 clean(160, 300, 0);
    for (int z = 0; z < 300; ++z)
        for (int x = 10; x <= 110; ++x) clean.at(x, z) = 1;
    REQUIRE(max_horizontal_run(clean) <= 2);
}

TEST_CASE("horizontal runs tolerate single-pixel gaps within a component") {
    Mask2 edges(40, 10, 0);
    for (int x = 5; x <= 20; ++x) edges.at(x, 4) = 1;
    edges.at(12, 4) = 0;     // nms dropout
    edges.at(12, 5) = 1;     // keeps the component connected
    Mask2 zone(40, 10, 0);
    const auto runs = horizontal_runs(edges, zone);
    int longest = 0;
    for (const auto& r : runs) longest = std::max(longest, r.length);
    REQUIRE(longest == 16);
}

TEST_CASE("a clean default-anatomy phantom raises no flags") {
    auto [subject, truth] = phantom::make_dixon_phantom(phantom::default_config(32));
    const AssembledVolume assembled = assemble(subject);
    const AnomalyReport report = detect_anomalies(assembled, fast_cfg());
    INFO("runs " << report.max_run_coronal << "/" << report.max_run_sagittal
                 << " head " << report.head_width_fraction << " jump " << report.max_centroid_jump_voxels);
    REQUIRE(report.flags.empty());
}

TEST_CASE("dims differing from the fixed grid raise fov_dims_mismatch") {
    const Geometry g = Geometry::axis_aligned({40, 40, 60}, {2.232, 2.232, 3.0}, {0, 0, 0});
    AssembledVolume assembled;
    assembled.channels.geom = g;
    assembled.channels.kind = ElementKind::float32;
    for (const char* name : kDixonChannels) {
        assembled.channels.names.push_back(name);
        assembled.channels.real.emplace_back(g.nvox(), 0.0f);
    }
    for (int k = 0; k < 60; ++k)
        for (int j = 10; j < 30; ++j)
            for (int i = 10; i < 30; ++i)
                for (auto& ch : assembled.channels.real) ch[g.index(i, j, k)] = 200.0f;
    assembled.provenance.assign(60, SliceProvenance{1, {1, 0}, {1.0, 0.0}});
    const AnomalyReport report = detect_anomalies(assembled, fast_cfg());
    REQUIRE(report.has(AnomalyFlag::fov_dims_mismatch));
}

TEST_CASE("a dual-slice 12-voxel notch is flagged and a 9-voxel notch is not") {
    phantom::PhantomConfig cfg12 = phantom::default_config(33);
    cfg12.liver_ideal = cfg12.pancreas_gre = cfg12.t1w = false;
    cfg12.defects.push_back(phantom::make_notch_defect(12, -400.0, false));
    cfg12.defects.push_back(phantom::make_notch_defect(12, -400.0, true));
    auto [subject12, truth12] = phantom::make_dixon_phantom(cfg12);
    const AnomalyReport r12 = detect_anomalies(assemble(subject12), fast_cfg());
    INFO("12-voxel runs " << r12.max_run_coronal << "/" << r12.max_run_sagittal);
    REQUIRE(!r12.flags.empty());

    phantom::PhantomConfig cfg9 = phantom::default_config(33);
    cfg9.liver_ideal = cfg9.pancreas_gre = cfg9.t1w = false;
    cfg9.defects.push_back(phantom::make_notch_defect(9, -400.0, false));
    cfg9.defects.push_back(phantom::make_notch_defect(9, -400.0, true));
    auto [subject9, truth9] = phantom::make_dixon_phantom(cfg9);
    const AnomalyReport r9 = detect_anomalies(assemble(subject9), fast_cfg());
    INFO("9-voxel runs " << r9.max_run_coronal << "/" << r9.max_run_sagittal);
    REQUIRE(r9.flags.empty());
}

TEST_CASE("dropout, head-in-fov, and a shifted station are flagged with their categories") {
    phantom::PhantomConfig cfg = phantom::default_config(34);
    cfg.liver_ideal = cfg.pancreas_gre = cfg.t1w = false;
    cfg.anatomy.head_in_fov = true;
    cfg.defects.push_back(phantom::make_dropout_defect(cfg.anatomy, "chest"));
    cfg.defects.push_back(phantom::make_series_shift_defect(3, 40.0));
    auto [subject, truth] = phantom::make_dixon_phantom(cfg);
    const AnomalyReport report = detect_anomalies(assemble(subject), fast_cfg());
    INFO("flags " << anomaly_report_json(report).dump());
    REQUIRE(report.has(AnomalyFlag::dropout_chest));
    REQUIRE(report.has(AnomalyFlag::head_neck_in_fov));
    REQUIRE(report.has(AnomalyFlag::series_shifted));
}

TEST_CASE("enlarging a notch never shrinks the measured run") {
    int prev = 0;
    for (const int width : {8, 12, 16, 24, 30}) {
        const int run = max_horizontal_run(ledge_mask(width));
        REQUIRE(run >= prev);
        prev = run;
    }
}
