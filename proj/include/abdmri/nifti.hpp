#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "abdmri/errors.hpp"
#include "abdmri/volume.hpp"

namespace abdmri::nifti {

#pragma pack(push, 1)
struct Header {
    std::int32_t sizeof_hdr;     // must be 348
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

inline constexpr std::int16_t kDtInt16 = 4;
inline constexpr std::int16_t kDtFloat32 = 16;
inline constexpr std::int16_t kDtComplex64 = 32;

namespace detail {

template <typename T>
void byteswap(T& v) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

inline void swap_header(Header& h) {
    byteswap(h.sizeof_hdr);
    byteswap(h.extents);
    byteswap(h.session_error);
    for (auto& d : h.dim) byteswap(d);
    byteswap(h.intent_p1);
    byteswap(h.intent_p2);
    byteswap(h.intent_p3);
    byteswap(h.intent_code);
    byteswap(h.datatype);
    byteswap(h.bitpix);
    byteswap(h.slice_start);
    for (auto& p : h.pixdim) byteswap(p);
    byteswap(h.vox_offset);
    byteswap(h.scl_slope);
    byteswap(h.scl_inter);
    byteswap(h.slice_end);
    byteswap(h.cal_max);
    byteswap(h.cal_min);
    byteswap(h.slice_duration);
    byteswap(h.toffset);
    byteswap(h.glmax);
    byteswap(h.glmin);
    byteswap(h.qform_code);
    byteswap(h.sform_code);
    byteswap(h.quatern_b);
    byteswap(h.quatern_c);
    byteswap(h.quatern_d);
    byteswap(h.qoffset_x);
    byteswap(h.qoffset_y);
    byteswap(h.qoffset_z);
    for (auto& f : h.srow_x) byteswap(f);
    for (auto& f : h.srow_y) byteswap(f);
    for (auto& f : h.srow_z) byteswap(f);
}

inline Affine affine_from_quaternion(const Header& h) {
    const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
    const double a2 = std::max(0.0, 1.0 - (b * b + c * c + d * d));
    const double a = std::sqrt(a2);
    const double qfac = (h.pixdim[0] < 0.0f) ? -1.0 : 1.0;
    Affine m = Affine::identity();
    const double r[3][3] = {
        {a * a + b * b - c * c - d * d, 2 * b * c - 2 * a * d, 2 * b * d + 2 * a * c},
        {2 * b * c + 2 * a * d, a * a + c * c - b * b - d * d, 2 * c * d - 2 * a * b},
        {2 * b * d - 2 * a * c, 2 * c * d + 2 * a * b, a * a + d * d - b * b - c * c}};
    const double sp[3] = {std::abs(h.pixdim[1]), std::abs(h.pixdim[2]), std::abs(h.pixdim[3])};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m.at(i, j) = r[i][j] * sp[j] * (j == 2 ? qfac : 1.0);
    m.at(0, 3) = h.qoffset_x;
    m.at(1, 3) = h.qoffset_y;
    m.at(2, 3) = h.qoffset_z;
    return m;
}

inline Affine decode_affine(const Header& h, const std::array<int, 3>& /*dims*/) {
    if (h.sform_code > 0) {
        Affine m = Affine::identity();
        for (int c = 0; c < 4; ++c) {
            m.at(0, c) = h.srow_x[c];
            m.at(1, c) = h.srow_y[c];
            m.at(2, c) = h.srow_z[c];
        }
        return m;
    }
    if (h.qform_code > 0) return affine_from_quaternion(h);
    Vec3 sp = {std::abs(h.pixdim[1]), std::abs(h.pixdim[2]), std::abs(h.pixdim[3])};
    for (auto& s : sp)
        if (s == 0.0) s = 1.0;
    return Affine::scaling_translation(sp, {0, 0, 0});
}

}  // namespace detail

// Reads a single-file .nii (magic "n+1") or an .hdr/.img pair (magic "ni1").
// Both byte orders are accepted; the sizeof_hdr field decides, cross-checked
// against dim[0]. sform wins over qform; scl_slope/scl_inter are applied when
// slope is nonzero.
inline Volume read_nifti(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::io_failure, "cannot open " + path.string());

    Header h{};
    in.read(reinterpret_cast<char*>(&h), sizeof(Header));
    require(in.gcount() == sizeof(Header), ErrorCode::malformed_header, "file shorter than a NIfTI-1 header");

    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        detail::byteswap(h.sizeof_hdr);
        require(h.sizeof_hdr == 348, ErrorCode::malformed_header, "header size field is not 348");
        detail::byteswap(h.sizeof_hdr);  // restore; swap_header redoes everything
        detail::swap_header(h);
        swapped = true;
    }
    require(h.dim[0] >= 1 && h.dim[0] <= 7, ErrorCode::malformed_header,
            swapped ? "implausible dim[0] after byte swap" : "implausible dim[0]");

    const bool single_file = std::memcmp(h.magic, "n+1", 4) == 0;
    const bool pair_file = std::memcmp(h.magic, "ni1", 4) == 0;
    require(single_file || pair_file, ErrorCode::malformed_header, "bad magic bytes");

    ElementKind kind;
    switch (h.datatype) {
        case kDtInt16:     kind = ElementKind::int16; break;
        case kDtFloat32:   kind = ElementKind::float32; break;
        case kDtComplex64: kind = ElementKind::complex64; break;
        default:
            fail(ErrorCode::unsupported_datatype, "datatype code " + std::to_string(h.datatype));
    }

    std::array<int, 3> dims = {1, 1, 1};
    for (int a = 0; a < 3; ++a)
        if (h.dim[0] > a) dims[a] = h.dim[1 + a];
    require(dims[0] > 0 && dims[1] > 0 && dims[2] > 0, ErrorCode::malformed_header, "non-positive dims");
    std::size_t channels = 1;
    for (int a = 4; a <= h.dim[0]; ++a) {
        require(h.dim[a] > 0, ErrorCode::malformed_header, "non-positive dims");
        channels *= static_cast<std::size_t>(h.dim[a]);
    }

    Volume vol;
    vol.kind = kind;
    vol.geom.dims = dims;
    vol.geom.affine = detail::decode_affine(h, dims);
    for (int c = 0; c < 3; ++c) vol.geom.spacing[c] = norm(vol.geom.affine.column(c));
    vol.geom.validate();

    const std::size_t n = vol.geom.nvox();
    const std::size_t payload = n * channels * element_size(kind);

    std::vector<char> raw(payload);
    if (single_file) {
        const auto offset = static_cast<std::streamoff>(h.vox_offset);
        require(offset >= static_cast<std::streamoff>(sizeof(Header)), ErrorCode::malformed_header,
                "vox_offset points inside the header");
        in.seekg(offset, std::ios::beg);
        in.read(raw.data(), static_cast<std::streamsize>(payload));
        require(static_cast<std::size_t>(in.gcount()) == payload, ErrorCode::truncated_data,
                "payload shorter than dims imply");
    } else {
        std::filesystem::path img = path;
        img.replace_extension(".img");
        std::ifstream di(img, std::ios::binary);
        require(di.good(), ErrorCode::io_failure, "cannot open " + img.string());
        di.seekg(static_cast<std::streamoff>(h.vox_offset), std::ios::beg);
        di.read(raw.data(), static_cast<std::streamsize>(payload));
        require(static_cast<std::size_t>(di.gcount()) == payload, ErrorCode::truncated_data,
                "payload shorter than dims imply");
    }

    const bool rescale = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
    const float slope = rescale ? h.scl_slope : 1.0f;
    const float inter = rescale ? h.scl_inter : 0.0f;
    // Rescaled integer data is no longer raw int16; promote so values survive.
    if (rescale && kind == ElementKind::int16) vol.kind = ElementKind::float32;

    for (std::size_t c = 0; c < channels; ++c) {
        vol.names.push_back(channels == 1 ? "data" : "c" + std::to_string(c));
        const char* src = raw.data() + c * n * element_size(kind);
        if (kind == ElementKind::complex64) {
            std::vector<cfloat> ch(n);
            std::memcpy(ch.data(), src, n * sizeof(cfloat));
            if (swapped)
                for (auto& v : ch) {
                    float re = v.real(), im = v.imag();
                    detail::byteswap(re);
                    detail::byteswap(im);
                    v = {re, im};
                }
            if (rescale)
                for (auto& v : ch) v = v * slope + cfloat{inter, 0.0f};
            vol.cplx.push_back(std::move(ch));
        } else if (kind == ElementKind::float32) {
            std::vector<float> ch(n);
            std::memcpy(ch.data(), src, n * sizeof(float));
            if (swapped)
                for (auto& v : ch) detail::byteswap(v);
            if (rescale)
                for (auto& v : ch) v = v * slope + inter;
            vol.real.push_back(std::move(ch));
        } else {
            std::vector<std::int16_t> tmp(n);
            std::memcpy(tmp.data(), src, n * sizeof(std::int16_t));
            if (swapped)
                for (auto& v : tmp) detail::byteswap(v);
            std::vector<float> ch(n);
            for (std::size_t i = 0; i < n; ++i) ch[i] = float(tmp[i]) * slope + inter;
            vol.real.push_back(std::move(ch));
        }
    }
    vol.validate();
    return vol;
}

// Emits a little-endian single-file .nii with vox_offset 352 and sform code 1.
inline void write_nifti(const Volume& vol, const std::filesystem::path& path) {
    vol.validate();

    Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    const bool multi = vol.nchannels() > 1;
    h.dim[0] = static_cast<std::int16_t>(multi ? 4 : 3);
    for (int a = 0; a < 3; ++a) h.dim[1 + a] = static_cast<std::int16_t>(vol.geom.dims[a]);
    h.dim[4] = static_cast<std::int16_t>(multi ? vol.nchannels() : 1);
    for (int a = 5; a < 8; ++a) h.dim[a] = 1;
    switch (vol.kind) {
        case ElementKind::int16:     h.datatype = kDtInt16;     h.bitpix = 16; break;
        case ElementKind::float32:   h.datatype = kDtFloat32;   h.bitpix = 32; break;
        case ElementKind::complex64: h.datatype = kDtComplex64; h.bitpix = 64; break;
    }
    h.pixdim[0] = 1.0f;
    for (int a = 0; a < 3; ++a) h.pixdim[1 + a] = static_cast<float>(vol.geom.spacing[a]);
    for (int a = 4; a < 8; ++a) h.pixdim[a] = 1.0f;
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // millimetres
    std::snprintf(h.descrip, sizeof(h.descrip), "abdmri");
    h.sform_code = 1;
    h.qform_code = 0;
    for (int c = 0; c < 4; ++c) {
        h.srow_x[c] = static_cast<float>(vol.geom.affine.at(0, c));
        h.srow_y[c] = static_cast<float>(vol.geom.affine.at(1, c));
        h.srow_z[c] = static_cast<float>(vol.geom.affine.at(2, c));
    }
    std::memcpy(h.magic, "n+1", 4);

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::io_failure, "cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(&h), sizeof(Header));
    const char pad[4] = {0, 0, 0, 0};
    out.write(pad, 4);  // header 348 -> data at 352

    const std::size_t n = vol.nvox();
    for (std::size_t c = 0; c < vol.nchannels(); ++c) {
        if (vol.kind == ElementKind::complex64) {
            out.write(reinterpret_cast<const char*>(vol.cplx[c].data()),
                      static_cast<std::streamsize>(n * sizeof(cfloat)));
        } else if (vol.kind == ElementKind::float32) {
            out.write(reinterpret_cast<const char*>(vol.real[c].data()),
                      static_cast<std::streamsize>(n * sizeof(float)));
        } else {
            std::vector<std::int16_t> tmp(n);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = static_cast<std::int16_t>(std::lrintf(vol.real[c][i]));
            out.write(reinterpret_cast<const char*>(tmp.data()),
                      static_cast<std::streamsize>(n * sizeof(std::int16_t)));
        }
    }
    out.flush();
    require(out.good(), ErrorCode::io_failure, "short write to " + path.string());
}

// Acquisition sidecar: {series, echo_times_ms, flip_angle_deg, tr_ms}.
struct Sidecar {
    std::string series;
    std::vector<double> echo_times_ms;
    double flip_angle_deg = 0.0;
    double tr_ms = 0.0;
};

inline Sidecar read_sidecar(const std::filesystem::path& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::io_failure, "cannot open " + path.string());
    nlohmann::json j;
    try {
        in >> j;
        Sidecar s;
        s.series = j.at("series").get<std::string>();
        if (j.contains("echo_times_ms")) s.echo_times_ms = j["echo_times_ms"].get<std::vector<double>>();
        s.flip_angle_deg = j.value("flip_angle_deg", 0.0);
        s.tr_ms = j.value("tr_ms", 0.0);
        return s;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::malformed_header, "bad sidecar " + path.string() + ": " + e.what());
    }
}

inline void write_sidecar(const Sidecar& s, const std::filesystem::path& path) {
    nlohmann::json j;
    j["series"] = s.series;
    j["echo_times_ms"] = s.echo_times_ms;
    j["flip_angle_deg"] = s.flip_angle_deg;
    j["tr_ms"] = s.tr_ms;
    std::ofstream out(path, std::ios::trunc);
    require(out.good(), ErrorCode::io_failure, "cannot create " + path.string());
    out << j.dump(2) << "\n";
}

}  // namespace abdmri::nifti
