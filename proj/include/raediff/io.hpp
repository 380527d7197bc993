#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "raediff/dtppm.hpp"
#include "raediff/tensor.hpp"

namespace raediff {

struct ImageIoError : std::runtime_error {
    enum class Kind { OpenFailed, BadMagic, BadHeader, BadMaxval, Truncated, UnsupportedChannels };
    Kind kind;
    ImageIoError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

namespace detail {

// Netpbm header token: skips whitespace and '#' comment lines. Leaves the
// single whitespace byte that terminates the token unconsumed, so the caller
// can treat it as the header/pixel separator after maxval.
inline std::string pnm_token(std::istream& is) {
    int ch = is.get();
    for (;;) {
        if (ch == EOF)
            throw ImageIoError(ImageIoError::Kind::Truncated, "unexpected end of header");
        if (ch == '#') {
            do ch = is.get();
            while (ch != EOF && ch != '\n');
            continue;
        }
        if (std::isspace(static_cast<unsigned char>(ch))) {
            ch = is.get();
            continue;
        }
        break;
    }
    std::string tok;
    while (ch != EOF && !std::isspace(static_cast<unsigned char>(ch))) {
        tok.push_back(static_cast<char>(ch));
        ch = is.get();
    }
    if (ch != EOF) is.unget();
    return tok;
}

inline int pnm_int(std::istream& is, const char* what) {
    const std::string tok = pnm_token(is);
    try {
        std::size_t pos = 0;
        const int v = std::stoi(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        return v;
    } catch (const std::exception&) {
        throw ImageIoError(ImageIoError::Kind::BadHeader,
                           std::string("malformed ") + what + " field: '" + tok + "'");
    }
}

}  // namespace detail

/// Read a binary PGM (P5) or PPM (P6) file with maxval 255. Pixel p maps to
/// p/127.5 - 1; PPM's interleaved RGB is converted to the planar layout.
inline ImageTensor read_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ImageIoError(ImageIoError::Kind::OpenFailed, "cannot open " + path);
    char m0 = 0, m1 = 0;
    is.get(m0);
    is.get(m1);
    if (!is || m0 != 'P' || (m1 != '5' && m1 != '6'))
        throw ImageIoError(ImageIoError::Kind::BadMagic, "bad magic in " + path);
    const int channels = (m1 == '5') ? 1 : 3;
    const int width = detail::pnm_int(is, "width");
    const int height = detail::pnm_int(is, "height");
    const int maxval = detail::pnm_int(is, "maxval");
    if (width <= 0 || height <= 0)
        throw ImageIoError(ImageIoError::Kind::BadHeader, "non-positive dimensions in " + path);
    if (maxval != 255)
        throw ImageIoError(ImageIoError::Kind::BadMaxval,
                           "unsupported maxval " + std::to_string(maxval) + " in " + path);
    // single whitespace byte separates header and pixel data
    is.get();

    const std::size_t n = static_cast<std::size_t>(width) * height * channels;
    std::vector<unsigned char> raw(n);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw ImageIoError(ImageIoError::Kind::Truncated, "truncated pixel data in " + path);

    ImageTensor out(height, width, channels);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < channels; ++c)
                out.at(c, y, x) =
                    raw[(static_cast<std::size_t>(y) * width + x) * channels + c] / 127.5 - 1.0;
    return out;
}

/// Write PGM (1 channel) or PPM (3 channels), maxval 255. Values are clamped
/// to [-1,1] and quantized with round-half-up; a second write of the re-read
/// file is byte-identical.
inline void write_image(const ImageTensor& img, const std::string& path) {
    if (img.empty())
        throw std::invalid_argument("write_image: empty tensor");
    if (img.channels != 1 && img.channels != 3)
        throw ImageIoError(ImageIoError::Kind::UnsupportedChannels,
                           "write_image: only 1 or 3 channels supported");
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os)
        throw ImageIoError(ImageIoError::Kind::OpenFailed, "cannot open for write: " + path);
    os << (img.channels == 1 ? "P5" : "P6") << "\n"
       << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> raw(img.size());
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                const double v = std::clamp(img.at(c, y, x), -1.0, 1.0);
                const double q = std::floor((v + 1.0) * 127.5 + 0.5);
                raw[(static_cast<std::size_t>(y) * img.width + x) * img.channels + c] =
                    static_cast<unsigned char>(std::clamp(q, 0.0, 255.0));
            }
    os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!os)
        throw ImageIoError(ImageIoError::Kind::OpenFailed, "write failed: " + path);
}

inline std::string sha256_hex(const unsigned char* data, std::size_t len) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int digest_len = 0;
    if (!EVP_Digest(data, len, digest, &digest_len, EVP_sha256(), nullptr))
        throw std::runtime_error("sha256: digest computation failed");
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(2 * digest_len);
    for (unsigned int i = 0; i < digest_len; ++i) {
        out.push_back(hex[digest[i] >> 4]);
        out.push_back(hex[digest[i] & 0xF]);
    }
    return out;
}

inline std::string sha256_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is)
        throw ImageIoError(ImageIoError::Kind::OpenFailed, "cannot open " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    const std::string data = ss.str();
    return sha256_hex(reinterpret_cast<const unsigned char*>(data.data()), data.size());
}

struct ManifestError : std::runtime_error {
    enum class Kind { OpenFailed, Schema, UnsupportedVersion, DigestMismatch, MissingFile };
    Kind kind;
    ManifestError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

/// Everything a protect run needs for an exact replay: schedule parameters,
/// the bias configuration, the permission levels, and one seed per source
/// image (derive_seed(master_seed, index)).
struct DatasetManifest {
    int format_version = 1;
    int timesteps = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.02;
    double gamma = 0.6;
    std::string trigger_sha256;
    std::vector<PermissionLevel> levels;
    int adverse_steps = 20;
    double reverse_factor = 1.4;
    std::uint64_t master_seed = 0;
    struct ImageEntry {
        std::string file;        // source image basename
        std::uint64_t seed = 0;  // derive_seed(master_seed, index)
    };
    std::vector<ImageEntry> images;

    bool operator==(const DatasetManifest& o) const {
        auto levels_eq = [&] {
            if (levels.size() != o.levels.size()) return false;
            for (std::size_t i = 0; i < levels.size(); ++i)
                if (levels[i].m != o.levels[i].m || levels[i].t_sn != o.levels[i].t_sn)
                    return false;
            return true;
        };
        auto images_eq = [&] {
            if (images.size() != o.images.size()) return false;
            for (std::size_t i = 0; i < images.size(); ++i)
                if (images[i].file != o.images[i].file || images[i].seed != o.images[i].seed)
                    return false;
            return true;
        };
        return format_version == o.format_version && timesteps == o.timesteps &&
               beta_min == o.beta_min && beta_max == o.beta_max && gamma == o.gamma &&
               trigger_sha256 == o.trigger_sha256 && adverse_steps == o.adverse_steps &&
               reverse_factor == o.reverse_factor && master_seed == o.master_seed &&
               levels_eq() && images_eq();
    }
};

// Seeds are serialized as decimal strings: they are full-range u64 and JSON
// numbers only guarantee 53 bits.
inline void write_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::ordered_json j;
    j["format_version"] = m.format_version;
    j["timesteps"] = m.timesteps;
    j["beta_min"] = m.beta_min;
    j["beta_max"] = m.beta_max;
    j["gamma"] = m.gamma;
    j["trigger_sha256"] = m.trigger_sha256;
    j["levels"] = nlohmann::ordered_json::array();
    for (const PermissionLevel& lv : m.levels)
        j["levels"].push_back({{"m", lv.m}, {"t_sn", lv.t_sn}});
    j["t_r"] = m.adverse_steps;
    j["eta"] = m.reverse_factor;
    j["master_seed"] = std::to_string(m.master_seed);
    j["images"] = nlohmann::ordered_json::array();
    for (const auto& e : m.images)
        j["images"].push_back({{"file", e.file}, {"seed", std::to_string(e.seed)}});

    // write-temp-then-rename so readers never observe a partial manifest
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::trunc);
        if (!os)
            throw ManifestError(ManifestError::Kind::OpenFailed, "cannot open for write: " + tmp);
        os << j.dump(2) << "\n";
        if (!os)
            throw ManifestError(ManifestError::Kind::OpenFailed, "write failed: " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

inline DatasetManifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is)
        throw ManifestError(ManifestError::Kind::OpenFailed, "cannot open " + path);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ManifestError(ManifestError::Kind::Schema, std::string("malformed manifest: ") + e.what());
    }
    DatasetManifest m;
    try {
        m.format_version = j.at("format_version").get<int>();
        if (m.format_version != 1)
            throw ManifestError(ManifestError::Kind::UnsupportedVersion,
                                "unsupported manifest version " + std::to_string(m.format_version));
        m.timesteps = j.at("timesteps").get<int>();
        m.beta_min = j.at("beta_min").get<double>();
        m.beta_max = j.at("beta_max").get<double>();
        m.gamma = j.at("gamma").get<double>();
        m.trigger_sha256 = j.at("trigger_sha256").get<std::string>();
        for (const auto& lj : j.at("levels"))
            m.levels.push_back({lj.at("m").get<int>(), lj.at("t_sn").get<int>()});
        m.adverse_steps = j.at("t_r").get<int>();
        m.reverse_factor = j.at("eta").get<double>();
        m.master_seed = std::stoull(j.at("master_seed").get<std::string>());
        for (const auto& ij : j.at("images"))
            m.images.push_back({ij.at("file").get<std::string>(),
                                std::stoull(ij.at("seed").get<std::string>())});
    } catch (const ManifestError&) {
        throw;
    } catch (const std::exception& e) {
        throw ManifestError(ManifestError::Kind::Schema, std::string("manifest schema: ") + e.what());
    }
    validate_levels(m.levels, m.timesteps);
    return m;
}

/// Trigger-possession gate: the digest of the presented trigger file must
/// equal the one recorded at protection time.
inline void verify_trigger_digest(const DatasetManifest& m, const std::string& trigger_path) {
    const std::string digest = sha256_file(trigger_path);
    if (digest != m.trigger_sha256)
        throw ManifestError(ManifestError::Kind::DigestMismatch,
                            "trigger digest mismatch: expected " + m.trigger_sha256 + ", got " +
                                digest);
}

/// Derived output name for a graded/protected/restored image:
/// level<m>/<stem>_<suffix><ext>.
inline std::string derived_image_path(const std::string& source_file, int level_m,
                                      const std::string& suffix) {
    const std::filesystem::path p(source_file);
    return "level" + std::to_string(level_m) + "/" + p.stem().string() + "_" + suffix +
           p.extension().string();
}

/// Check that every file an operation needs exists under the dataset root.
inline void validate_dataset_files(const DatasetManifest& m, const std::string& root,
                                   bool require_protected) {
    for (const auto& e : m.images) {
        for (const PermissionLevel& lv : m.levels) {
            std::vector<std::string> need = {derived_image_path(e.file, lv.m, "sn")};
            if (require_protected) need.push_back(derived_image_path(e.file, lv.m, "p"));
            for (const std::string& rel : need) {
                const std::filesystem::path full = std::filesystem::path(root) / rel;
                if (!std::filesystem::exists(full))
                    throw ManifestError(ManifestError::Kind::MissingFile,
                                        "referenced file missing: " + full.string());
            }
        }
    }
}

/// Deterministic dataset load: PGM/PPM files in the directory, sorted by
/// filename. Returns (basename, tensor) pairs.
inline std::vector<std::pair<std::string, ImageTensor>> load_image_dir(const std::string& dir) {
    std::vector<std::string> names;
    for (const auto& entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file()) continue;
        const std::string ext = entry.path().extension().string();
        if (ext == ".pgm" || ext == ".ppm") names.push_back(entry.path().filename().string());
    }
    std::sort(names.begin(), names.end());
    std::vector<std::pair<std::string, ImageTensor>> out;
    out.reserve(names.size());
    for (const std::string& name : names)
        out.emplace_back(name, read_image((std::filesystem::path(dir) / name).string()));
    return out;
}

}  // namespace raediff
