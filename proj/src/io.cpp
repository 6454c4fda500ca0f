#include "livreg/io.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace livreg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::size_t kNiftiHeaderSize = 348;
constexpr std::size_t kNiftiDataOffset = 352;
constexpr std::int16_t kNiftiUint8 = 2;
constexpr std::int16_t kNiftiFloat32 = 16;
constexpr std::int16_t kNiftiIntentVector = 1007;
constexpr const char *kDescripPrefix = "livreg kind=";

enum class Format { nifti, native };

Format format_of(const fs::path &path) {
    const std::string ext = path.extension().string();
    if (ext == ".nii") return Format::nifti;
    if (ext == ".json") return Format::native;
    if (ext == ".gz") throw Error(ErrorCode::unsupported_format, path.string() + ": compressed NIfTI is not supported");
    throw Error(ErrorCode::unsupported_format, path.string() + ": unknown volume file extension (use .nii or .json)");
}

template <class T>
void put(std::string &buf, std::size_t off, T v) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    std::memcpy(buf.data() + off, b, sizeof(T));
}

template <class T>
T get(const std::string &buf, std::size_t off) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, buf.data() + off, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T v;
    std::memcpy(&v, b, sizeof(T));
    return v;
}

std::size_t dtype_size(DType t) { return t == DType::float32 ? 4 : 1; }

// float -> double through the shortest decimal that round-trips the float,
// so a spacing of 1.37 written as float32 comes back as the double 1.37.
double widen_decimal(float f) {
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), f);
    double d = 0.0;
    std::from_chars(buf, r.ptr, d);
    return d;
}

std::string encode(std::span<const double> values, DType dtype) {
    std::string out(values.size() * dtype_size(dtype), '\0');
    if (dtype == DType::float32) {
        for (std::size_t i = 0; i < values.size(); ++i) put<float>(out, 4 * i, static_cast<float>(values[i]));
    } else {
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double v = values[i];
            if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) {
                throw Error(ErrorCode::invalid_argument, "value " + std::to_string(v) + " is not representable as uint8");
            }
            out[i] = static_cast<char>(static_cast<unsigned char>(v));
        }
    }
    return out;
}

std::vector<double> decode(const std::string &bytes, std::size_t offset, std::size_t count, DType dtype) {
    std::vector<double> out(count);
    if (dtype == DType::float32) {
        for (std::size_t i = 0; i < count; ++i) {
            const float f = get<float>(bytes, offset + 4 * i);
            if (!std::isfinite(f)) throw Error(ErrorCode::invalid_data, "payload contains non-finite values");
            out[i] = f;
        }
    } else {
        for (std::size_t i = 0; i < count; ++i) out[i] = static_cast<unsigned char>(bytes[offset + i]);
    }
    return out;
}

// NIfTI stores vector components as the slowest axis; memory is interleaved.
std::vector<double> planar_to_interleaved(const std::vector<double> &planar) {
    const std::size_t n = planar.size() / 3;
    std::vector<double> out(planar.size());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) out[3 * i + c] = planar[c * n + i];
    return out;
}

std::vector<double> interleaved_to_planar(std::span<const double> inter) {
    const std::size_t n = inter.size() / 3;
    std::vector<double> out(inter.size());
    for (std::size_t c = 0; c < 3; ++c)
        for (std::size_t i = 0; i < n; ++i) out[c * n + i] = inter[3 * i + c];
    return out;
}

void check_kind(const VolumeHeader &h, const std::string &where) {
    const bool vector_kind = h.kind == "displacement" || h.kind == "velocity";
    const bool scalar_kind = h.kind == "intensity" || h.kind == "mask";
    if (!(vector_kind || scalar_kind)) throw Error(ErrorCode::unsupported_format, where + ": unknown kind '" + h.kind + "'");
    if (vector_kind != (h.components == 3)) {
        throw Error(ErrorCode::unsupported_format, where + ": kind '" + h.kind + "' does not match the component count");
    }
}

void check_grid(const Grid &g, const std::string &where) {
    try {
        g.validate();
    } catch (const Error &e) {
        throw Error(ErrorCode::invalid_data, where + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------
// NIfTI-1 subset

struct NiftiFile {
    VolumeHeader header;
    std::size_t offset = kNiftiDataOffset;
    std::string bytes;
};

NiftiFile parse_nifti(const fs::path &path) {
    const std::string where = path.string();
    NiftiFile f;
    f.bytes = read_file(path);
    const std::string &s = f.bytes;
    if (s.size() < kNiftiHeaderSize) throw Error(ErrorCode::size_mismatch, where + ": shorter than a NIfTI-1 header");

    const std::int32_t sizeof_hdr = get<std::int32_t>(s, 0);
    if (sizeof_hdr != 348) {
        const auto u = static_cast<std::uint32_t>(sizeof_hdr);
        if (((u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24)) == 348u) {
            throw Error(ErrorCode::unsupported_format, where + ": big-endian NIfTI is not supported");
        }
        throw Error(ErrorCode::bad_magic, where + ": sizeof_hdr is not 348");
    }
    const std::string magic = s.substr(344, 4);
    if (magic == std::string("ni1\0", 4)) {
        throw Error(ErrorCode::unsupported_format, where + ": two-file NIfTI (.hdr/.img) is not supported");
    }
    if (magic != std::string("n+1\0", 4)) throw Error(ErrorCode::bad_magic, where + ": magic is not \"n+1\"");

    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = get<std::int16_t>(s, 40 + 2 * std::size_t(i));
    VolumeHeader &h = f.header;
    if (dim[0] == 3 || (dim[0] == 4 && dim[4] == 1)) {
        h.components = 1;
    } else if (dim[0] == 5 && dim[4] == 1 && dim[5] == 3) {
        h.components = 3;
    } else {
        throw Error(ErrorCode::unsupported_format, where + ": only 3D volumes and 3-vector fields are supported");
    }

    const std::int16_t datatype = get<std::int16_t>(s, 70);
    const std::int16_t bitpix = get<std::int16_t>(s, 72);
    if (datatype == kNiftiFloat32) {
        h.dtype = DType::float32;
    } else if (datatype == kNiftiUint8) {
        h.dtype = DType::uint8;
    } else {
        throw Error(ErrorCode::unsupported_datatype,
                    where + ": NIfTI datatype " + std::to_string(datatype) + " is not supported (float32 or uint8)");
    }
    if (bitpix != 8 * std::int16_t(dtype_size(h.dtype))) {
        throw Error(ErrorCode::unsupported_format, where + ": bitpix does not match the datatype");
    }

    const float vox_offset = get<float>(s, 108);
    if (!(vox_offset >= float(kNiftiDataOffset)) || vox_offset != std::floor(vox_offset)) {
        throw Error(ErrorCode::unsupported_format, where + ": vox_offset must be an integer >= 352");
    }
    f.offset = static_cast<std::size_t>(vox_offset);
    const float slope = get<float>(s, 112), inter = get<float>(s, 116);
    if (!(slope == 0.0f || slope == 1.0f) || inter != 0.0f) {
        throw Error(ErrorCode::unsupported_format, where + ": intensity scaling (scl_slope/scl_inter) is not supported");
    }

    for (int a = 0; a < 3; ++a) {
        h.grid.dims[a] = dim[a + 1];
        h.grid.spacing[a] = widen_decimal(get<float>(s, 80 + 4 * std::size_t(a)));
    }
    const std::int16_t qform = get<std::int16_t>(s, 252), sform = get<std::int16_t>(s, 254);
    for (int a = 0; a < 3; ++a) {
        if (qform > 0) {
            h.grid.origin[a] = widen_decimal(get<float>(s, 268 + 4 * std::size_t(a)));
        } else if (sform > 0) {
            h.grid.origin[a] = widen_decimal(get<float>(s, 280 + 16 * std::size_t(a) + 12));
        } else {
            h.grid.origin[a] = 0.0;
        }
    }
    check_grid(h.grid, where);

    const std::string descrip(s.data() + 148, strnlen(s.data() + 148, 80));
    if (descrip.rfind(kDescripPrefix, 0) == 0) {
        h.kind = descrip.substr(std::strlen(kDescripPrefix));
    } else {
        h.kind = h.components == 3 ? "displacement" : (h.dtype == DType::uint8 ? "mask" : "intensity");
    }
    check_kind(h, where);

    const std::size_t expected = f.offset + h.grid.voxel_count() * std::size_t(h.components) * dtype_size(h.dtype);
    if (s.size() != expected) {
        throw Error(ErrorCode::size_mismatch, where + ": file has " + std::to_string(s.size()) + " bytes, header implies " +
                                                  std::to_string(expected));
    }
    return f;
}

std::string nifti_header(const VolumeHeader &h) {
    for (int a = 0; a < 3; ++a) {
        if (h.grid.dims[a] > 32767) throw Error(ErrorCode::unsupported_format, "NIfTI-1 dimensions are limited to 32767");
    }
    std::string b(kNiftiDataOffset, '\0');
    put<std::int32_t>(b, 0, 348);
    b[38] = 'r';
    const std::int16_t dim[8] = {std::int16_t(h.components == 3 ? 5 : 3), std::int16_t(h.grid.dims[0]),
                                 std::int16_t(h.grid.dims[1]), std::int16_t(h.grid.dims[2]), 1,
                                 std::int16_t(h.components == 3 ? 3 : 1), 1, 1};
    for (int i = 0; i < 8; ++i) put<std::int16_t>(b, 40 + 2 * std::size_t(i), dim[i]);
    if (h.components == 3) put<std::int16_t>(b, 68, kNiftiIntentVector);
    put<std::int16_t>(b, 70, h.dtype == DType::float32 ? kNiftiFloat32 : kNiftiUint8);
    put<std::int16_t>(b, 72, std::int16_t(8 * dtype_size(h.dtype)));
    const float pixdim[8] = {1.0f, float(h.grid.spacing[0]), float(h.grid.spacing[1]), float(h.grid.spacing[2]),
                             1.0f, 1.0f, 1.0f, 1.0f};
    for (int i = 0; i < 8; ++i) put<float>(b, 76 + 4 * std::size_t(i), pixdim[i]);
    put<float>(b, 108, float(kNiftiDataOffset));
    put<float>(b, 112, 1.0f);
    b[123] = 2; // millimetres
    const std::string descrip = kDescripPrefix + h.kind;
    std::memcpy(b.data() + 148, descrip.data(), std::min<std::size_t>(descrip.size(), 79));
    put<std::int16_t>(b, 252, 1);
    for (int a = 0; a < 3; ++a) put<float>(b, 268 + 4 * std::size_t(a), float(h.grid.origin[a]));
    std::memcpy(b.data() + 344, "n+1\0", 4);
    return b;
}

// ---------------------------------------------------------------------------
// Native sidecar + raw payload

struct NativeFile {
    VolumeHeader header;
    fs::path payload;
};

NativeFile parse_native(const fs::path &path) {
    const std::string where = path.string();
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error &) {
        throw Error(ErrorCode::bad_magic, where + ": not a JSON volume header");
    }
    if (!j.is_object() || j.value("format", std::string()) != "livreg-volume") {
        throw Error(ErrorCode::bad_magic, where + ": missing \"format\": \"livreg-volume\"");
    }
    NativeFile f;
    VolumeHeader &h = f.header;
    try {
        if (j.at("version").get<int>() != 1) throw Error(ErrorCode::unsupported_format, where + ": unsupported version");
        if (j.at("byte_order").get<std::string>() != "little") {
            throw Error(ErrorCode::unsupported_format, where + ": only little-endian payloads are supported");
        }
        const auto dims = j.at("dims").get<std::array<int, 3>>();
        const auto spacing = j.at("spacing").get<std::array<double, 3>>();
        const auto origin = j.at("origin").get<std::array<double, 3>>();
        h.grid = Grid{dims, spacing, origin};
        const std::string dtype = j.at("dtype").get<std::string>();
        h.dtype = parse_dtype(dtype);
        const std::string layout = j.at("layout").get<std::string>();
        if (layout == "scalar") {
            h.components = 1;
        } else if (layout == "vector3_interleaved") {
            h.components = 3;
        } else {
            throw Error(ErrorCode::unsupported_format, where + ": unknown layout '" + layout + "'");
        }
        h.kind = j.at("kind").get<std::string>();
        f.payload = path.parent_path() / j.at("payload").get<std::string>();
    } catch (const json::exception &e) {
        throw Error(ErrorCode::unsupported_format, where + ": malformed header (" + e.what() + ")");
    }
    check_grid(h.grid, where);
    check_kind(h, where);
    return f;
}

std::string native_sidecar(const VolumeHeader &h, const std::string &payload_name) {
    json j;
    j["format"] = "livreg-volume";
    j["version"] = 1;
    j["dims"] = h.grid.dims;
    j["spacing"] = h.grid.spacing;
    j["origin"] = h.grid.origin;
    j["dtype"] = std::string(to_string(h.dtype));
    j["layout"] = h.components == 3 ? "vector3_interleaved" : "scalar";
    j["kind"] = h.kind;
    j["byte_order"] = "little";
    j["payload"] = payload_name;
    return j.dump(2) + "\n";
}

std::string native_payload(const NativeFile &f) {
    std::string bytes = read_file(f.payload);
    const std::size_t expected = f.header.grid.voxel_count() * std::size_t(f.header.components) * dtype_size(f.header.dtype);
    if (bytes.size() != expected) {
        throw Error(ErrorCode::size_mismatch, f.payload.string() + ": payload has " + std::to_string(bytes.size()) +
                                                  " bytes, header implies " + std::to_string(expected));
    }
    return bytes;
}

// Interleaved values as stored in memory.
std::vector<double> read_values(const fs::path &path, VolumeHeader &header) {
    if (format_of(path) == Format::nifti) {
        NiftiFile f = parse_nifti(path);
        header = f.header;
        const std::size_t n = header.grid.voxel_count() * std::size_t(header.components);
        std::vector<double> v = decode(f.bytes, f.offset, n, header.dtype);
        return header.components == 3 ? planar_to_interleaved(v) : v;
    }
    NativeFile f = parse_native(path);
    header = f.header;
    const std::string bytes = native_payload(f);
    return decode(bytes, 0, header.grid.voxel_count() * std::size_t(header.components), header.dtype);
}

void write_values(const fs::path &path, const VolumeHeader &h, std::span<const double> interleaved) {
    if (format_of(path) == Format::nifti) {
        std::string out = nifti_header(h);
        if (h.components == 3) {
            out += encode(interleaved_to_planar(interleaved), h.dtype);
        } else {
            out += encode(interleaved, h.dtype);
        }
        write_file(path, out);
        return;
    }
    const fs::path payload = fs::path(path).replace_extension(".raw");
    write_file(payload, encode(interleaved, h.dtype));
    write_file(path, native_sidecar(h, payload.filename().string()));
}

} // namespace

std::string_view to_string(DType t) noexcept { return t == DType::float32 ? "float32" : "uint8"; }

DType parse_dtype(std::string_view name) {
    if (name == "float32") return DType::float32;
    if (name == "uint8") return DType::uint8;
    throw Error(ErrorCode::unsupported_datatype, "unsupported dtype '" + std::string(name) + "' (float32 or uint8)");
}

std::string read_file(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::io_error, path.string() + ": cannot open for reading");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw Error(ErrorCode::io_error, path.string() + ": read failed");
    return bytes;
}

void write_file(const fs::path &path, const std::string &bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io_error, path.string() + ": cannot open for writing");
    out.write(bytes.data(), std::streamsize(bytes.size()));
    out.close();
    if (!out) throw Error(ErrorCode::io_error, path.string() + ": write failed");
}

VolumeHeader read_header(const fs::path &path) {
    if (format_of(path) == Format::nifti) return parse_nifti(path).header;
    return parse_native(path).header;
}

Volume3 read_volume(const fs::path &path) {
    VolumeHeader h;
    std::vector<double> v = read_values(path, h);
    if (h.components != 1) throw Error(ErrorCode::unsupported_format, path.string() + ": expected a scalar volume, found a vector field");
    return Volume3(h.grid, std::move(v), h.kind == "mask" ? VolumeKind::mask : VolumeKind::intensity);
}

VectorField3 read_field(const fs::path &path) {
    VolumeHeader h;
    std::vector<double> v = read_values(path, h);
    if (h.components != 3) throw Error(ErrorCode::unsupported_format, path.string() + ": expected a vector field, found a scalar volume");
    return VectorField3(h.grid, std::move(v), h.kind == "velocity" ? FieldKind::velocity : FieldKind::displacement);
}

void write_volume(const fs::path &path, const Volume3 &vol, std::optional<DType> dtype) {
    VolumeHeader h;
    h.grid = vol.grid();
    h.components = 1;
    h.kind = vol.is_mask() ? "mask" : "intensity";
    if (dtype) {
        h.dtype = *dtype;
    } else {
        const bool binary = std::ranges::all_of(vol.data(), [](double v) { return v == 0.0 || v == 1.0; });
        h.dtype = vol.is_mask() && binary ? DType::uint8 : DType::float32;
    }
    write_values(path, h, vol.data());
}

void write_field(const fs::path &path, const VectorField3 &field) {
    VolumeHeader h;
    h.grid = field.grid();
    h.components = 3;
    h.dtype = DType::float32;
    h.kind = field.kind() == FieldKind::velocity ? "velocity" : "displacement";
    write_values(path, h, field.data());
}

std::string read_payload_bytes(const fs::path &path) {
    if (format_of(path) == Format::nifti) {
        NiftiFile f = parse_nifti(path);
        return f.bytes.substr(f.offset);
    }
    return native_payload(parse_native(path));
}

std::string volume_digest(const fs::path &path) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto feed = [&h](const std::string &bytes) {
        for (unsigned char c : bytes) {
            h ^= c;
            h *= 0x100000001b3ull;
        }
    };
    feed(read_file(path));
    if (format_of(path) == Format::native) feed(read_file(parse_native(path).payload));
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

} // namespace livreg
