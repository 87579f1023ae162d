#include "nodulefuse/container.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <zlib.h>
#include <json.hpp>

#include "nodulefuse/errors.hpp"

namespace nf {

namespace {

using nlohmann::json;

constexpr char kMagic[4] = {'N', 'F', 'V', '1'};

std::uint32_t crc32_of(const std::string& bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()),
                  static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

template <typename T>
void append_le(std::string& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T)); // little-endian host assumed
    out.append(buf, sizeof(T));
}

template <typename T>
T read_le(const std::string& in, std::size_t& pos) {
    T v;
    std::memcpy(&v, in.data() + pos, sizeof(T));
    pos += sizeof(T);
    return v;
}

std::string encode_blob(const NoduleRecord& r) {
    std::string out;
    out.reserve(4 + 12 + 12 + r.volume.data.size() * 4 + r.mask.data.size());
    out.append(kMagic, 4);
    for (int a = 0; a < 3; ++a) append_le<std::uint32_t>(out, static_cast<std::uint32_t>(r.volume.dims[a]));
    for (int a = 0; a < 3; ++a) append_le<float>(out, r.volume.spacing[a]);
    for (float v : r.volume.data) append_le<float>(out, v);
    for (float m : r.mask.data) out.push_back(m == 1.0f ? '\x01' : '\x00');
    return out;
}

std::string read_file(const std::filesystem::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw DataError("container: cannot open " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return std::move(ss).str();
}

} // namespace

void save_container(const std::vector<NoduleRecord>& records, const std::filesystem::path& dir) {
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto report = validate_record(records[i]);
        if (!report.ok())
            throw DataError("container: record " + std::to_string(i) +
                            " fails validation: " + report.violations.front());
    }

    std::filesystem::create_directories(dir);

    json manifest;
    manifest["schema_version"] = kContainerSchemaVersion;
    json recs = json::array();
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto& r = records[i];
        char name[32];
        std::snprintf(name, sizeof(name), "rec_%06zu.nfv", i);
        const std::string blob = encode_blob(r);
        {
            std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
            if (!f) throw DataError("container: cannot write " + (dir / name).string());
            f.write(blob.data(), static_cast<std::streamsize>(blob.size()));
        }
        json meta;
        meta["path"] = name;
        meta["crc32"] = crc32_of(blob);
        meta["bytes"] = blob.size();
        meta["patient_id"] = r.patient_id;
        meta["malignancy"] = r.malignancy.value;
        json bio = json::array();
        for (int b = 0; b < kBiomarkerCount; ++b) bio.push_back(r.biomarkers[b]);
        meta["biomarkers"] = bio;
        recs.push_back(std::move(meta));
    }
    manifest["records"] = std::move(recs);

    std::ofstream mf(dir / "manifest.json", std::ios::trunc);
    if (!mf) throw DataError("container: cannot write manifest at " + dir.string());
    mf << manifest.dump(2) << "\n";
}

std::vector<NoduleRecord> load_container(const std::filesystem::path& dir) {
    const auto manifest_path = dir / "manifest.json";
    if (!std::filesystem::exists(manifest_path))
        throw DataError("container: no manifest.json in " + dir.string());

    json manifest;
    try {
        manifest = json::parse(read_file(manifest_path));
    } catch (const json::exception& e) {
        throw DataError("container: manifest parse failure: " + std::string(e.what()));
    }

    if (!manifest.contains("schema_version") || manifest["schema_version"].get<int>() != kContainerSchemaVersion)
        throw UnsupportedSchemaError("container: unsupported schema_version in " + dir.string());

    std::vector<NoduleRecord> records;
    for (const auto& meta : manifest.at("records")) {
        const std::string rel = meta.at("path").get<std::string>();
        const std::string blob = read_file(dir / rel);

        if (blob.size() < 4 + 12 + 12) throw DataError("container: truncated blob " + rel);
        if (std::memcmp(blob.data(), kMagic, 4) != 0)
            throw UnsupportedSchemaError("container: bad magic in blob " + rel);

        std::size_t pos = 4;
        std::array<int, 3> dims{};
        for (int a = 0; a < 3; ++a) dims[a] = static_cast<int>(read_le<std::uint32_t>(blob, pos));
        std::array<float, 3> spacing{};
        for (int a = 0; a < 3; ++a) spacing[a] = read_le<float>(blob, pos);

        const std::size_t nvox = static_cast<std::size_t>(dims[0]) * dims[1] * dims[2];
        const std::size_t expected = pos + nvox * 4 + nvox;
        if (blob.size() < expected) throw DataError("container: truncated blob " + rel);
        if (blob.size() > expected) throw DataError("container: trailing bytes in blob " + rel);

        if (crc32_of(blob) != meta.at("crc32").get<std::uint32_t>())
            throw DataError("container: checksum mismatch in blob " + rel);

        NoduleRecord r;
        r.patient_id = meta.at("patient_id").get<std::string>();
        r.malignancy.value = meta.at("malignancy").get<int>();
        const auto& bio = meta.at("biomarkers");
        if (bio.size() != kBiomarkerCount)
            throw DataError("container: biomarker arity mismatch in manifest for " + rel);
        for (int b = 0; b < kBiomarkerCount; ++b) r.biomarkers[b] = bio[static_cast<std::size_t>(b)].get<double>();

        r.volume.dims = dims;
        r.volume.spacing = spacing;
        r.volume.kind = GridKind::Intensity;
        r.volume.data.resize(nvox);
        for (std::size_t i = 0; i < nvox; ++i) r.volume.data[i] = read_le<float>(blob, pos);

        r.mask.dims = dims;
        r.mask.spacing = spacing;
        r.mask.kind = GridKind::BinaryMask;
        r.mask.data.resize(nvox);
        for (std::size_t i = 0; i < nvox; ++i)
            r.mask.data[i] = blob[pos + i] ? 1.0f : 0.0f;

        records.push_back(std::move(r));
    }
    return records;
}

} // namespace nf
