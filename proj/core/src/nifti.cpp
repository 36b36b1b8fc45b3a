#include "hdiff/nifti.hpp"

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "hdiff/errors.hpp"

namespace hdiff {

namespace {

// standard nifti-1 layout; naturally packed, data follows at vox_offset
struct Nifti1Header {
    int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    int32_t extents;
    int16_t session_error;
    char regular;
    char dim_info;
    int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    int16_t intent_code;
    int16_t datatype;
    int16_t bitpix;
    int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration, toffset;
    int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
static_assert(sizeof(Nifti1Header) == 348, "nifti-1 header must be 348 bytes");

constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtInt32 = 8;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtFloat64 = 64;

void swap2(void* p) {
    auto* b = static_cast<uint8_t*>(p);
    std::swap(b[0], b[1]);
}
void swap4(void* p) {
    auto* b = static_cast<uint8_t*>(p);
    std::swap(b[0], b[3]);
    std::swap(b[1], b[2]);
}
void swap8(void* p) {
    auto* b = static_cast<uint8_t*>(p);
    std::swap(b[0], b[7]);
    std::swap(b[1], b[6]);
    std::swap(b[2], b[5]);
    std::swap(b[3], b[4]);
}

void swap_header(Nifti1Header& h) {
    swap4(&h.sizeof_hdr);
    swap4(&h.extents);
    swap2(&h.session_error);
    for (auto& d : h.dim) swap2(&d);
    swap4(&h.intent_p1);
    swap4(&h.intent_p2);
    swap4(&h.intent_p3);
    swap2(&h.intent_code);
    swap2(&h.datatype);
    swap2(&h.bitpix);
    swap2(&h.slice_start);
    for (auto& p : h.pixdim) swap4(&p);
    swap4(&h.vox_offset);
    swap4(&h.scl_slope);
    swap4(&h.scl_inter);
    swap2(&h.slice_end);
    swap4(&h.cal_max);
    swap4(&h.cal_min);
    swap4(&h.slice_duration);
    swap4(&h.toffset);
    swap4(&h.glmax);
    swap4(&h.glmin);
    swap2(&h.qform_code);
    swap2(&h.sform_code);
    swap4(&h.quatern_b);
    swap4(&h.quatern_c);
    swap4(&h.quatern_d);
    swap4(&h.qoffset_x);
    swap4(&h.qoffset_y);
    swap4(&h.qoffset_z);
    for (auto& v : h.srow_x) swap4(&v);
    for (auto& v : h.srow_y) swap4(&v);
    for (auto& v : h.srow_z) swap4(&v);
}

// gzread handles plain files transparently, so every load goes through it
std::vector<uint8_t> read_all(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open " + path);
    std::vector<uint8_t> buf;
    uint8_t chunk[1 << 16];
    int n;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) buf.insert(buf.end(), chunk, chunk + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) throw IoError("decompression failed for " + path);
    return buf;
}

bool wants_gzip(const std::string& path) {
    return path.size() > 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

void write_all(const std::string& path, const std::vector<uint8_t>& bytes) {
    if (wants_gzip(path)) {
        gzFile f = gzopen(path.c_str(), "wb");
        if (!f) throw IoError("cannot open " + path + " for writing");
        const std::size_t total = bytes.size();
        std::size_t off = 0;
        while (off < total) {
            const unsigned step = static_cast<unsigned>(std::min<std::size_t>(total - off, 1u << 30));
            if (gzwrite(f, bytes.data() + off, step) != static_cast<int>(step)) {
                gzclose(f);
                throw IoError("write failed for " + path);
            }
            off += step;
        }
        gzclose(f);
    } else {
        std::ofstream f(path, std::ios::binary);
        if (!f) throw IoError("cannot open " + path + " for writing");
        f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw IoError("write failed for " + path);
    }
}

struct Loaded {
    Tensor data;
    std::array<double, 3> spacing;
};

Loaded load_any(const std::string& path) {
    const std::vector<uint8_t> bytes = read_all(path);
    if (bytes.size() < sizeof(Nifti1Header))
        throw IoError(path + ": truncated header, " + std::to_string(bytes.size()) + " bytes at offset 0");

    Nifti1Header h;
    std::memcpy(&h, bytes.data(), sizeof(h));
    bool swapped = false;
    if (h.sizeof_hdr != 348) {
        swap_header(h);
        swapped = true;
        if (h.sizeof_hdr != 348)
            throw IoError(path + ": bad sizeof_hdr at offset 0 (not a nifti-1 file)");
    }
    if (std::strncmp(h.magic, "n+1", 3) != 0)
        throw IoError(path + ": bad magic at offset 344 (expected single-file 'n+1')");
    if (h.dim[0] != 3)
        throw IoError(path + ": expected a 3D image, got dim[0]=" + std::to_string(h.dim[0]) +
                      " at offset 40");
    const int nx = h.dim[1], ny = h.dim[2], nz = h.dim[3];
    if (nx < 1 || ny < 1 || nz < 1) throw IoError(path + ": non-positive dimensions at offset 40");

    const std::size_t nvox = static_cast<std::size_t>(nx) * ny * nz;
    std::size_t elem = 0;
    switch (h.datatype) {
        case kDtUint8: elem = 1; break;
        case kDtInt16: elem = 2; break;
        case kDtInt32: elem = 4; break;
        case kDtFloat32: elem = 4; break;
        case kDtFloat64: elem = 8; break;
        default:
            throw IoError(path + ": unsupported datatype " + std::to_string(h.datatype) + " at offset 70");
    }
    const std::size_t off = static_cast<std::size_t>(h.vox_offset);
    if (h.vox_offset < 348.0f || off + nvox * elem > bytes.size())
        throw IoError(path + ": data exceeds file size at offset " + std::to_string(off));

    Tensor t({nx, ny, nz});
    const uint8_t* src = bytes.data() + off;
    auto read_elem = [&](std::size_t i) -> double {
        switch (h.datatype) {
            case kDtUint8: return static_cast<double>(src[i]);
            case kDtInt16: {
                int16_t v;
                std::memcpy(&v, src + 2 * i, 2);
                if (swapped) swap2(&v);
                return v;
            }
            case kDtInt32: {
                int32_t v;
                std::memcpy(&v, src + 4 * i, 4);
                if (swapped) swap4(&v);
                return v;
            }
            case kDtFloat32: {
                float v;
                std::memcpy(&v, src + 4 * i, 4);
                if (swapped) swap4(&v);
                return v;
            }
            default: {
                double v;
                std::memcpy(&v, src + 8 * i, 8);
                if (swapped) swap8(&v);
                return v;
            }
        }
    };
    const bool rescale = h.scl_slope != 0.0f && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f);
    for (std::size_t i = 0; i < nvox; ++i) {
        double v = read_elem(i);
        if (rescale) v = v * h.scl_slope + h.scl_inter;
        t[i] = v;
    }

    Loaded out;
    out.data = std::move(t);
    for (int a = 0; a < 3; ++a) {
        const double s = h.pixdim[a + 1];
        out.spacing[a] = s > 0.0 ? s : 1.0;
    }
    return out;
}

void save_any(const std::string& path, const Tensor& data, const std::array<double, 3>& spacing,
              int16_t datatype) {
    if (data.ndim() != 3) throw DataError("save: rank-3 grid required");
    Nifti1Header h;
    std::memset(&h, 0, sizeof(h));
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<int16_t>(data.dim(0));
    h.dim[2] = static_cast<int16_t>(data.dim(1));
    h.dim[3] = static_cast<int16_t>(data.dim(2));
    for (int i = 4; i < 8; ++i) h.dim[i] = 1;
    h.datatype = datatype;
    h.bitpix = datatype == kDtUint8 ? 8 : 64;
    h.pixdim[0] = 1.0f;
    for (int a = 0; a < 3; ++a) h.pixdim[a + 1] = static_cast<float>(spacing[a]);
    h.vox_offset = 352.0f;  // header + 4-byte extension flag
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // mm
    std::strncpy(h.descrip, "hdiff", sizeof(h.descrip) - 1);
    h.sform_code = 1;
    h.srow_x[0] = static_cast<float>(spacing[0]);
    h.srow_y[1] = static_cast<float>(spacing[1]);
    h.srow_z[2] = static_cast<float>(spacing[2]);
    std::memcpy(h.magic, "n+1", 4);

    std::vector<uint8_t> bytes(352, 0);
    std::memcpy(bytes.data(), &h, sizeof(h));
    if (datatype == kDtUint8) {
        bytes.reserve(352 + data.size());
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double v = data[i];
            if (v < 0.0 || v > 255.0 || v != static_cast<double>(static_cast<uint8_t>(v)))
                throw DataError("save: value " + std::to_string(v) + " not representable as uint8");
            bytes.push_back(static_cast<uint8_t>(v));
        }
    } else {
        bytes.resize(352 + data.size() * 8);
        std::memcpy(bytes.data() + 352, data.data(), data.size() * 8);
    }
    write_all(path, bytes);
}

}  // namespace

Volume load_volume(const std::string& path) {
    Loaded l = load_any(path);
    Volume v;
    v.data = std::move(l.data);
    v.spacing = l.spacing;
    v.validate();
    return v;
}

void save_volume(const Volume& v, const std::string& path) {
    v.validate();
    save_any(path, v.data, v.spacing, kDtFloat64);
}

MaskVolume load_mask(const std::string& path) {
    Loaded l = load_any(path);
    MaskVolume m;
    m.data = std::move(l.data);
    m.spacing = l.spacing;
    m.validate();
    return m;
}

void save_mask(const MaskVolume& m, const std::string& path) {
    m.validate();
    save_any(path, m.data, m.spacing, kDtUint8);
}

LabelVolume load_labels(const std::string& path) {
    Loaded l = load_any(path);
    LabelVolume lv;
    lv.data = std::move(l.data);
    lv.spacing = l.spacing;
    lv.validate();
    return lv;
}

void save_labels(const LabelVolume& l, const std::string& path) {
    l.validate();
    save_any(path, l.data, l.spacing, kDtUint8);
}

}  // namespace hdiff
