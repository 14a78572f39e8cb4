#include <catch2/catch_amalgamated.hpp>

#include <cstring>
#include <fstream>

#include "abdmri/nifti.hpp"
#include "abdmri/resample.hpp"
#include "abdmri/rng.hpp"
#include "abdmri/volume.hpp"

#include "helpers.hpp"

using namespace abdmri;

namespace {

Volume random_volume(Rng& rng) {
    Volume v;
    const std::array<int, 3> dims = {2 + int(rng.below(10)), 2 + int(rng.below(10)), 2 + int(rng.below(10))};
    // affine entries quantized to float32 so the stored sform reproduces them
    const Vec3 spacing = {double(float(0.5 + 3.0 * rng.uniform())), double(float(0.5 + 3.0 * rng.uniform())),
                          double(float(0.5 + 5.0 * rng.uniform()))};
    const Vec3 origin = {double(float(rng.uniform(-400.0, 400.0))), double(float(rng.uniform(-400.0, 400.0))),
                         double(float(rng.uniform(-800.0, 800.0)))};
    v.geom = Geometry::axis_aligned(dims, spacing, origin);

    const int kind = int(rng.below(3));
    const std::size_t channels = 1 + rng.below(3);
    const std::size_t n = v.geom.nvox();
    if (kind == 2) {
        v.kind = ElementKind::complex64;
        for (std::size_t c = 0; c < channels; ++c) {
            v.names.push_back("c" + std::to_string(c));
            std::vector<cfloat> ch(n);
            for (auto& x : ch) x = cfloat{float(rng.uniform(-10, 10)), float(rng.uniform(-10, 10))};
            v.cplx.push_back(std::move(ch));
        }
    } else {
        v.kind = kind == 0 ? ElementKind::int16 : ElementKind::float32;
        for (std::size_t c = 0; c < channels; ++c) {
            v.names.push_back("c" + std::to_string(c));
            std::vector<float> ch(n);
            for (auto& x : ch)
                x = v.kind == ElementKind::int16 ? float(int(rng.below(65536)) - 32768)
                                                 : float(rng.uniform(-100.0, 100.0));
            v.real.push_back(std::move(ch));
        }
    }
    return v;
}

nifti::Header minimal_header() {
    nifti::Header h{};
    h.sizeof_hdr = 348;
    h.dim[0] = 3;
    h.dim[1] = h.dim[2] = h.dim[3] = 2;
    h.dim[4] = h.dim[5] = h.dim[6] = h.dim[7] = 1;
    h.datatype = nifti::kDtFloat32;
    h.bitpix = 32;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = h.pixdim[2] = h.pixdim[3] = 1.0f;
    h.vox_offset = 352.0f;
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

void write_raw(const std::filesystem::path& p, const nifti::Header& h, const std::vector<char>& payload) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(reinterpret_cast<const char*>(&h), sizeof(h));
    const char pad[4] = {0, 0, 0, 0};
    out.write(pad, 4);
    out.write(payload.data(), std::streamsize(payload.size()));
}

}  // namespace

TEST_CASE("geometry validates dims, spacing, and affine consistency") {
    Geometry g = Geometry::axis_aligned({4, 4, 4}, {2.0, 2.0, 3.0}, {0, 0, 0});
    REQUIRE_NOTHROW(g.validate());

    Geometry bad = g;
    bad.spacing[0] = 2.5;  // disagrees with the affine column norm
    REQUIRE_THROWS_AS(bad.validate(), Error);

    Geometry singular = g;
    singular.affine.at(0, 0) = 0.0;
    REQUIRE_THROWS_AS(singular.validate(), Error);
}

TEST_CASE("affine inverse round-trips points") {
    Affine a = Affine::scaling_translation({2.0, 3.0, 4.0}, {-10.0, 5.0, 7.0});
    a.at(0, 1) = 0.5;  // shear
    const Affine inv = a.inverse();
    const Vec3 p = {3.0, -2.0, 9.0};
    const Vec3 q = inv.apply(a.apply(p));
    for (int i = 0; i < 3; ++i) REQUIRE(q[i] == Catch::Approx(p[i]).margin(1e-10));
}

TEST_CASE("world extent of a 10-voxel axis at 2 mm spacing spans 0..18 mm") {
    const Geometry g = Geometry::axis_aligned({10, 1, 1}, {2.0, 1.0, 1.0}, {0, 0, 0});
    const WorldExtent e = world_extent(g);
    REQUIRE(e.lo[0] == Catch::Approx(0.0));
    REQUIRE(e.hi[0] == Catch::Approx(18.0));
}

TEST_CASE("world extent is equivariant under translation") {
    Geometry g = Geometry::axis_aligned({7, 5, 9}, {1.5, 2.0, 3.0}, {10, -4, 2});
    const WorldExtent e0 = world_extent(g);
    g.affine.at(2, 3) += 5.0;
    const WorldExtent e1 = world_extent(g);
    REQUIRE(e1.lo[2] == Catch::Approx(e0.lo[2] + 5.0));
    REQUIRE(e1.hi[2] == Catch::Approx(e0.hi[2] + 5.0));
    REQUIRE(e1.lo[0] == Catch::Approx(e0.lo[0]));
}

TEST_CASE("minimal header with zero payload reads back as a zero volume") {
    TempDir tmp("nifti_min");
    const auto path = tmp.path / "min.nii";
    write_raw(path, minimal_header(), std::vector<char>(8 * 4, 0));
    const Volume v = nifti::read_nifti(path);
    REQUIRE(v.geom.dims == std::array<int, 3>{2, 2, 2});
    REQUIRE(v.kind == ElementKind::float32);
    for (const float x : v.real[0]) REQUIRE(x == 0.0f);
}

TEST_CASE("round-trip reproduces data bit-exactly and the affine to 1e-5 over 100 random volumes") {
    TempDir tmp("nifti_rt");
    Rng rng(20240811);
    for (int trial = 0; trial < 100; ++trial) {
        const Volume v = random_volume(rng);
        const auto path = tmp.path / ("v" + std::to_string(trial) + ".nii");
        nifti::write_nifti(v, path);

        const std::size_t expected =
            352 + v.nvox() * v.nchannels() * element_size(v.kind);
        REQUIRE(std::filesystem::file_size(path) == expected);

        const Volume r = nifti::read_nifti(path);
        REQUIRE(r.geom.dims == v.geom.dims);
        REQUIRE(r.kind == v.kind);
        REQUIRE(r.nchannels() == v.nchannels());
        REQUIRE(r.geom.affine.almost_equal(v.geom.affine, 1e-5));
        if (v.is_complex()) {
            for (std::size_t c = 0; c < v.nchannels(); ++c)
                REQUIRE(std::memcmp(r.cplx[c].data(), v.cplx[c].data(), v.nvox() * sizeof(cfloat)) == 0);
        } else {
            for (std::size_t c = 0; c < v.nchannels(); ++c)
                REQUIRE(std::memcmp(r.real[c].data(), v.real[c].data(), v.nvox() * sizeof(float)) == 0);
        }
    }
}

TEST_CASE("payload truncated by one byte raises TruncatedData") {
    TempDir tmp("nifti_trunc");
    const auto path = tmp.path / "t.nii";
    Volume v = Volume::scalar(Geometry::axis_aligned({3, 3, 3}, {1, 1, 1}, {0, 0, 0}));
    v.real[0][13] = 5.0f;
    nifti::write_nifti(v, path);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 1);
    try {
        nifti::read_nifti(path);
        FAIL("expected TruncatedData");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::truncated_data);
    }
}

TEST_CASE("malformed header corpus is rejected with typed errors") {
    TempDir tmp("nifti_bad");
    const std::vector<char> payload(8 * 4, 0);
    int case_id = 0;
    const auto expect = [&](ErrorCode code, auto mutate) {
        nifti::Header h = minimal_header();
        std::vector<char> data = payload;
        mutate(h, data);
        const auto path = tmp.path / ("bad" + std::to_string(case_id++) + ".nii");
        write_raw(path, h, data);
        try {
            nifti::read_nifti(path);
            FAIL("expected rejection for case " + std::to_string(case_id - 1));
        } catch (const Error& e) {
            REQUIRE(e.code() == code);
        }
    };

    expect(ErrorCode::malformed_header, [](nifti::Header& h, auto&) { std::memcpy(h.magic, "xx1", 4); });
    expect(ErrorCode::malformed_header, [](nifti::Header& h, auto&) { h.sizeof_hdr = 300; });
    expect(ErrorCode::malformed_header, [](nifti::Header& h, auto&) { h.dim[0] = 0; });
    expect(ErrorCode::malformed_header, [](nifti::Header& h, auto&) { h.dim[2] = -4; });
    expect(ErrorCode::malformed_header, [](nifti::Header& h, auto&) { h.dim[0] = 9; });
    expect(ErrorCode::malformed_header, [](nifti::Header& h, auto&) { h.vox_offset = 100.0f; });
    expect(ErrorCode::unsupported_datatype, [](nifti::Header& h, auto&) { h.datatype = 8; });   // int32
    expect(ErrorCode::unsupported_datatype, [](nifti::Header& h, auto&) { h.datatype = 64; });  // float64
    expect(ErrorCode::truncated_data, [](nifti::Header&, std::vector<char>& d) { d.resize(8); });
    {  // file shorter than the header itself
        const auto path = tmp.path / "stub.nii";
        std::ofstream out(path, std::ios::binary);
        out.write("n+1", 3);
        out.close();
        try {
            nifti::read_nifti(path);
            FAIL("expected MalformedHeader");
        } catch (const Error& e) {
            REQUIRE(e.code() == ErrorCode::malformed_header);
        }
    }
}

TEST_CASE("byte-swapped files are detected and decoded") {
    TempDir tmp("nifti_swap");
    const auto path = tmp.path / "be.nii";
    nifti::Header h = minimal_header();
    h.datatype = nifti::kDtInt16;
    h.bitpix = 16;
    std::vector<std::int16_t> vals = {1, -2, 300, -400, 5, 6, -7, 32767};
    nifti::detail::swap_header(h);
    std::vector<char> payload(vals.size() * 2);
    for (std::size_t i = 0; i < vals.size(); ++i) {
        std::int16_t x = vals[i];
        nifti::detail::byteswap(x);
        std::memcpy(payload.data() + 2 * i, &x, 2);
    }
    write_raw(path, h, payload);
    const Volume v = nifti::read_nifti(path);
    REQUIRE(v.kind == ElementKind::int16);
    for (std::size_t i = 0; i < vals.size(); ++i) REQUIRE(v.real[0][i] == float(vals[i]));
}

TEST_CASE("scl_slope/scl_inter rescales and promotes int16") {
    TempDir tmp("nifti_scl");
    const auto path = tmp.path / "s.nii";
    nifti::Header h = minimal_header();
    h.datatype = nifti::kDtInt16;
    h.bitpix = 16;
    h.scl_slope = 2.0f;
    h.scl_inter = 1.0f;
    std::vector<char> payload(16, 0);
    const std::int16_t x = 10;
    std::memcpy(payload.data(), &x, 2);
    write_raw(path, h, payload);
    const Volume v = nifti::read_nifti(path);
    REQUIRE(v.kind == ElementKind::float32);
    REQUIRE(v.real[0][0] == 21.0f);
}

TEST_CASE("volumes with non-finite voxels are rejected before write") {
    TempDir tmp("nifti_nan");
    Volume v = Volume::scalar(Geometry::axis_aligned({2, 2, 2}, {1, 1, 1}, {0, 0, 0}));
    v.real[0][3] = std::numeric_limits<float>::quiet_NaN();
    try {
        nifti::write_nifti(v, tmp.path / "nan.nii");
        FAIL("expected InvalidVolume");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::invalid_volume);
    }
}

TEST_CASE("sidecar round-trips") {
    TempDir tmp("sidecar");
    nifti::Sidecar s;
    s.series = "liver_ideal";
    s.echo_times_ms = {1.2, 3.2, 5.2};
    s.flip_angle_deg = 5.0;
    s.tr_ms = 14.0;
    nifti::write_sidecar(s, tmp.path / "meta.json");
    const nifti::Sidecar r = nifti::read_sidecar(tmp.path / "meta.json");
    REQUIRE(r.series == s.series);
    REQUIRE(r.echo_times_ms == s.echo_times_ms);
    REQUIRE(r.flip_angle_deg == s.flip_angle_deg);
}

TEST_CASE("resampling onto the source grid is the identity") {
    Rng rng(7);
    Volume v = Volume::scalar(Geometry::axis_aligned({8, 7, 6}, {2.0, 2.0, 3.0}, {-5, 4, 10}));
    for (auto& x : v.real[0]) x = float(rng.uniform(0, 50));
    const Volume r = resample(v, v.geom, Interp::trilinear);
    for (std::size_t i = 0; i < v.nvox(); ++i) REQUIRE(r.real[0][i] == Catch::Approx(v.real[0][i]).margin(1e-5));
}

TEST_CASE("downsampling a constant volume preserves the constant") {
    Volume v = Volume::scalar(Geometry::axis_aligned({16, 16, 16}, {1, 1, 1}, {0, 0, 0}), ElementKind::float32,
                              "data", 7.0f);
    // half resolution, interior only
    const Geometry target = Geometry::axis_aligned({6, 6, 6}, {2, 2, 2}, {1.0, 1.0, 1.0});
    const Volume r = resample(v, target, Interp::trilinear);
    for (const float x : r.real[0]) REQUIRE(x == Catch::Approx(7.0f).margin(1e-6));
}

TEST_CASE("trilinear interpolation of a linear ramp is exact at half-integer offsets") {
    Volume v = Volume::scalar(Geometry::axis_aligned({6, 6, 12}, {1, 1, 1}, {0, 0, 0}));
    for (int k = 0; k < 12; ++k)
        for (int j = 0; j < 6; ++j)
            for (int i = 0; i < 6; ++i) v.real[0][v.geom.index(i, j, k)] = float(k);
    Geometry target = v.geom;
    target.dims[2] = 10;
    target.affine.at(2, 3) = 0.5;  // sample at k + 0.5
    const Volume r = resample(v, target, Interp::trilinear);
    for (int k = 0; k < 10; ++k)
        REQUIRE(r.real[0][target.index(3, 3, k)] == Catch::Approx(double(k) + 0.5).margin(1e-5));
}

TEST_CASE("nearest-neighbour resampling is idempotent on identical grids") {
    Rng rng(9);
    Volume v = Volume::scalar(Geometry::axis_aligned({5, 5, 5}, {2, 2, 2}, {3, -2, 8}));
    for (auto& x : v.real[0]) x = float(rng.uniform(0, 9));
    const Volume once = resample(v, v.geom, Interp::nearest);
    const Volume twice = resample(once, v.geom, Interp::nearest);
    REQUIRE(once.real[0] == v.real[0]);
    REQUIRE(twice.real[0] == v.real[0]);
}

TEST_CASE("echo series validation enforces ordering and count") {
    EchoSeries s;
    s.volume = Volume::complex(Geometry::axis_aligned({2, 2, 1}, {1, 1, 1}, {0, 0, 0}), 3);
    s.echo_times_ms = {1.0, 2.0, 2.0};
    REQUIRE_THROWS_AS(s.validate(), Error);
    s.echo_times_ms = {1.0, 2.0, 3.0};
    REQUIRE_NOTHROW(s.validate(3));
    try {
        s.validate(5);
        FAIL("expected InsufficientEchoes");
    } catch (const Error& e) {
        REQUIRE(e.code() == ErrorCode::insufficient_echoes);
    }
}
