#include "tags/volume_io.hpp"

#include <bit>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include <zlib.h>

namespace tags::io {

static_assert(std::endian::native == std::endian::little, "raw volume I/O assumes a little-endian host");

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiDataOffset = 352;

enum NiftiType : std::int16_t {
    kUInt8 = 2,
    kInt16 = 4,
    kInt32 = 8,
    kFloat32 = 16,
    kFloat64 = 64,
    kInt8 = 256,
    kUInt16 = 512,
};

template <class T>
T load(const std::uint8_t* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

template <class T>
void store(std::vector<std::uint8_t>& buf, std::size_t offset, T v) {
    std::memcpy(buf.data() + offset, &v, sizeof(T));
}

bool has_suffix(const fs::path& p, const std::string& suffix) {
    const std::string s = p.string();
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

int bytes_per_voxel(std::int16_t type) {
    switch (type) {
        case kUInt8:
        case kInt8: return 1;
        case kInt16:
        case kUInt16: return 2;
        case kInt32:
        case kFloat32: return 4;
        case kFloat64: return 8;
        default: return 0;
    }
}

double decode_scalar(const std::uint8_t* p, std::int16_t type) {
    switch (type) {
        case kUInt8: return *p;
        case kInt8: return static_cast<std::int8_t>(*p);
        case kInt16: return load<std::int16_t>(p);
        case kUInt16: return load<std::uint16_t>(p);
        case kInt32: return load<std::int32_t>(p);
        case kFloat32: return load<float>(p);
        case kFloat64: return load<double>(p);
        default: throw IoError("unsupported voxel type " + std::to_string(type));
    }
}

std::int16_t dtype_from_name(const std::string& name) {
    if (name == "uint8") return kUInt8;
    if (name == "int8") return kInt8;
    if (name == "int16") return kInt16;
    if (name == "uint16") return kUInt16;
    if (name == "int32") return kInt32;
    if (name == "float32") return kFloat32;
    if (name == "float64") return kFloat64;
    throw IoError("unknown dtype '" + name + "'");
}

Volume decode_raster(const std::uint8_t* p, std::size_t available, Dims3 dims, std::int16_t type) {
    const int bpv = bytes_per_voxel(type);
    if (bpv == 0) throw IoError("unsupported voxel type " + std::to_string(type));
    if (dims.d < 1 || dims.h < 1 || dims.w < 1) throw IoError("degenerate volume extents " + dims.str());
    if (available < dims.count() * bpv) throw IoError("volume data truncated");
    Volume v{Grid3<double>(dims), {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
    for (std::size_t i = 0; i < dims.count(); ++i) v.data[i] = decode_scalar(p + i * bpv, type);
    return v;
}

std::vector<std::uint8_t> encode_header(Dims3 dims, const Spacing& sp, const std::array<double, 3>& origin,
                                        std::int16_t type) {
    std::vector<std::uint8_t> buf(kNiftiDataOffset, 0);
    store<std::int32_t>(buf, 0, kNiftiHeaderSize);
    const std::int16_t dim[8] = {3, static_cast<std::int16_t>(dims.w), static_cast<std::int16_t>(dims.h),
                                 static_cast<std::int16_t>(dims.d), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) store<std::int16_t>(buf, 40 + 2 * i, dim[i]);
    store<std::int16_t>(buf, 70, type);
    store<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * bytes_per_voxel(type)));
    const float pixdim[8] = {1.0f, static_cast<float>(sp[2]), static_cast<float>(sp[1]), static_cast<float>(sp[0]),
                             1.0f, 1.0f, 1.0f, 1.0f};
    for (int i = 0; i < 8; ++i) store<float>(buf, 76 + 4 * i, pixdim[i]);
    store<float>(buf, 108, static_cast<float>(kNiftiDataOffset));
    store<float>(buf, 112, 1.0f);  // scl_slope
    store<std::uint8_t>(buf, 123, 10);  // xyzt_units: mm + s
    store<std::int16_t>(buf, 252, 1);   // qform_code
    store<float>(buf, 268, static_cast<float>(origin[2]));
    store<float>(buf, 272, static_cast<float>(origin[1]));
    store<float>(buf, 276, static_cast<float>(origin[0]));
    std::memcpy(buf.data() + 344, "n+1\0", 4);
    return buf;
}

std::int16_t dims_value(Dims3 d, int axis) {
    const int v = d[axis];
    if (v > 32767) throw IoError("extent too large for NIfTI-1");
    return static_cast<std::int16_t>(v);
}

fs::path resolve(const fs::path& p, const fs::path& base) {
    if (p.is_absolute()) return p;
    if (auto root = data_root()) return *root / p;
    return base / p;
}

Volume read_raw(const fs::path& header_path) {
    json header;
    try {
        std::ifstream in(header_path);
        if (!in) throw IoError("cannot open " + header_path.string());
        header = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("malformed raw header " + header_path.string() + ": " + e.what());
    }
    try {
        const auto dims_v = header.at("dims").get<std::vector<int>>();
        if (dims_v.size() != 3) throw IoError("raw header dims must have 3 entries");
        const Dims3 dims{dims_v[0], dims_v[1], dims_v[2]};
        const std::int16_t type = dtype_from_name(header.value("dtype", std::string("float32")));
        const fs::path data_path = header_path.parent_path() / header.at("data").get<std::string>();
        const auto bytes = read_file(data_path);
        Volume v = decode_raster(bytes.data(), bytes.size(), dims, type);
        if (header.contains("spacing")) v.spacing = header["spacing"].get<Spacing>();
        if (header.contains("origin")) v.origin = header["origin"].get<std::array<double, 3>>();
        for (double s : v.spacing)
            if (!(s > 0.0)) throw IoError("raw header spacing must be > 0");
        return v;
    } catch (const json::exception& e) {
        throw IoError("malformed raw header " + header_path.string() + ": " + e.what());
    }
}

void write_raw(const Volume& v, const fs::path& header_path, bool as_mask) {
    const Dims3 d = v.dims();
    fs::path data_path = header_path;
    data_path.replace_extension(".raw");
    std::vector<std::uint8_t> bytes;
    if (as_mask) {
        bytes.resize(d.count());
        for (std::size_t i = 0; i < d.count(); ++i) bytes[i] = v.data[i] != 0.0 ? 1 : 0;
    } else {
        bytes.resize(d.count() * sizeof(float));
        for (std::size_t i = 0; i < d.count(); ++i) {
            const float f = static_cast<float>(v.data[i]);
            std::memcpy(bytes.data() + i * sizeof(float), &f, sizeof(float));
        }
    }
    write_file(data_path, bytes);
    json header = {{"dims", {d.d, d.h, d.w}},
                   {"spacing", v.spacing},
                   {"origin", v.origin},
                   {"dtype", as_mask ? "uint8" : "float32"},
                   {"data", data_path.filename().string()}};
    std::ofstream out(header_path);
    if (!out) throw IoError("cannot write " + header_path.string());
    out << header.dump(2) << '\n';
}

void write_any(const Volume& v, const fs::path& path, bool as_mask) {
    if (has_suffix(path, ".json")) {
        write_raw(v, path, as_mask);
        return;
    }
    auto bytes = as_mask ? encode_nifti(to_mask(v)) : encode_nifti(v);
    if (has_suffix(path, ".gz")) bytes = gzip_compress(bytes);
    write_file(path, bytes);
}

Volume mask_as_volume(const MaskVolume& m) {
    Volume v{Grid3<double>(m.dims()), m.spacing, m.origin};
    for (std::size_t i = 0; i < m.data.size(); ++i) v.data[i] = m.data[i];
    return v;
}

}  // namespace

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

std::vector<std::uint8_t> gzip_compress(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
        throw IoError("deflateInit2 failed");
    }
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(bytes.size())) + 32);
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw IoError("gzip compression failed");
    out.resize(zs.total_out);
    return out;
}

std::vector<std::uint8_t> gzip_decompress(std::span<const std::uint8_t> bytes) {
    z_stream zs{};
    if (inflateInit2(&zs, 15 + 32) != Z_OK) throw IoError("inflateInit2 failed");
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    std::vector<std::uint8_t> out;
    std::uint8_t chunk[1 << 16];
    int rc = Z_OK;
    while (rc != Z_STREAM_END) {
        zs.next_out = chunk;
        zs.avail_out = sizeof(chunk);
        rc = inflate(&zs, Z_NO_FLUSH);
        if (rc != Z_OK && rc != Z_STREAM_END) {
            inflateEnd(&zs);
            throw IoError("corrupt gzip stream");
        }
        out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
        if (rc == Z_OK && zs.avail_in == 0 && zs.avail_out != 0) {
            inflateEnd(&zs);
            throw IoError("truncated gzip stream");
        }
    }
    inflateEnd(&zs);
    return out;
}

Volume decode_nifti(std::span<const std::uint8_t> bytes) {
    std::vector<std::uint8_t> inflated;
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b) {
        inflated = gzip_decompress(bytes);
        bytes = inflated;
    }
    if (bytes.size() < kNiftiHeaderSize) throw IoError("NIfTI header truncated");
    const std::uint8_t* p = bytes.data();
    if (load<std::int32_t>(p) != kNiftiHeaderSize) throw IoError("not a NIfTI-1 file (sizeof_hdr)");
    if (std::memcmp(p + 344, "n+1", 3) != 0) throw IoError("only single-file NIfTI (n+1) is supported");
    const std::int16_t ndim = load<std::int16_t>(p + 40);
    if (ndim < 1 || ndim > 7) throw IoError("invalid NIfTI dimensionality");
    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = load<std::int16_t>(p + 40 + 2 * i);
    for (int i = 4; i <= ndim; ++i)
        if (dim[i] > 1) throw IoError("only 3D NIfTI volumes are supported");
    const Dims3 dims{ndim >= 3 ? dim[3] : 1, ndim >= 2 ? dim[2] : 1, dim[1]};
    const std::int16_t type = load<std::int16_t>(p + 70);
    float pixdim[8];
    for (int i = 0; i < 8; ++i) pixdim[i] = load<float>(p + 76 + 4 * i);
    const auto offset = static_cast<std::size_t>(load<float>(p + 108));
    if (offset < kNiftiHeaderSize || offset > bytes.size()) throw IoError("invalid NIfTI vox_offset");
    Volume v = decode_raster(p + offset, bytes.size() - offset, dims, type);

    const float slope = load<float>(p + 112);
    const float inter = load<float>(p + 116);
    if (slope != 0.0f && std::isfinite(slope) && (slope != 1.0f || inter != 0.0f)) {
        for (double& x : v.data.values()) x = x * slope + inter;
    }
    for (int a = 0; a < 3; ++a) {
        const double s = std::fabs(static_cast<double>(pixdim[3 - a]));
        v.spacing[a] = s > 0.0 ? s : 1.0;
    }
    const std::int16_t qform = load<std::int16_t>(p + 252);
    const std::int16_t sform = load<std::int16_t>(p + 254);
    if (sform > 0) {
        v.origin = {load<float>(p + 312 + 12), load<float>(p + 296 + 12), load<float>(p + 280 + 12)};
    } else if (qform > 0) {
        v.origin = {load<float>(p + 276), load<float>(p + 272), load<float>(p + 268)};
    }
    return v;
}

std::vector<std::uint8_t> encode_nifti(const Volume& v) {
    const Dims3 d = v.dims();
    for (int a = 0; a < 3; ++a) dims_value(d, a);
    auto buf = encode_header(d, v.spacing, v.origin, kFloat32);
    buf.resize(kNiftiDataOffset + d.count() * sizeof(float));
    for (std::size_t i = 0; i < d.count(); ++i) {
        store<float>(buf, kNiftiDataOffset + i * sizeof(float), static_cast<float>(v.data[i]));
    }
    return buf;
}

std::vector<std::uint8_t> encode_nifti(const MaskVolume& m) {
    const Dims3 d = m.dims();
    for (int a = 0; a < 3; ++a) dims_value(d, a);
    auto buf = encode_header(d, m.spacing, m.origin, kUInt8);
    buf.insert(buf.end(), m.data.values().begin(), m.data.values().end());
    return buf;
}

MaskVolume to_mask(const Volume& v) {
    MaskVolume m(v.dims(), v.spacing);
    m.origin = v.origin;
    for (std::size_t i = 0; i < v.data.size(); ++i) m.data[i] = v.data[i] != 0.0 ? 1 : 0;
    return m;
}

Volume read_volume(const fs::path& path) {
    if (has_suffix(path, ".json")) return read_raw(path);
    return decode_nifti(read_file(path));
}

MaskVolume read_mask(const fs::path& path) { return to_mask(read_volume(path)); }

void write_volume(const Volume& v, const fs::path& path) { write_any(v, path, false); }

void write_mask(const MaskVolume& m, const fs::path& path) { write_any(mask_as_volume(m), path, true); }

std::optional<fs::path> data_root() {
    if (const char* root = std::getenv("TAGS_DATA_ROOT"); root && *root) return fs::path(root);
    return std::nullopt;
}

DatasetManifest read_manifest(const fs::path& path) {
    json doc;
    try {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open manifest " + path.string());
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
    const fs::path base = path.parent_path();
    DatasetManifest manifest;
    try {
        const json& cases = doc.is_array() ? doc : doc.at("cases");
        int n = 0;
        for (const auto& c : cases) {
            CaseRecord rec;
            rec.id = c.value("id", "case" + std::to_string(n));
            rec.image = resolve(c.at("image").get<std::string>(), base);
            rec.organ = resolve(c.at("organ").get<std::string>(), base);
            if (c.contains("tumor") && !c["tumor"].is_null()) rec.tumor = resolve(c["tumor"].get<std::string>(), base);
            rec.organ_name = c.value("organ_name", std::string("kidney"));
            manifest.cases.push_back(std::move(rec));
            ++n;
        }
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + path.string() + ": " + e.what());
    }
    return manifest;
}

void write_manifest(const DatasetManifest& manifest, const fs::path& path) {
    json cases = json::array();
    for (const auto& c : manifest.cases) {
        json rec = {{"id", c.id}, {"image", c.image.string()}, {"organ", c.organ.string()}, {"organ_name", c.organ_name}};
        rec["tumor"] = c.tumor ? json(c.tumor->string()) : json(nullptr);
        cases.push_back(std::move(rec));
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << json{{"cases", cases}}.dump(2) << '\n';
}

}  // namespace tags::io
