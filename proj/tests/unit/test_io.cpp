#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "raediff/io.hpp"
#include "support/synthetic.hpp"
#include "support/temp_dir.hpp"

using namespace raediff;

namespace {

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::string& bytes) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

DatasetManifest sample_manifest(const std::string& digest) {
    DatasetManifest m;
    m.trigger_sha256 = digest;
    m.levels = {{1, 1}, {2, 2}, {3, 3}};
    m.master_seed = 0xDEADBEEFCAFE1234ull;  // beyond 53-bit JSON precision
    m.images = {{"img000.pgm", derive_seed(m.master_seed, 0)},
                {"img001.pgm", derive_seed(m.master_seed, 1)}};
    return m;
}

}  // namespace

TEST_CASE("pixel value mapping on read") {
    testsupport::TempDir dir;
    const std::string path = dir.str("gray.pgm");
    spit(path, std::string("P5\n3 1\n255\n") + '\x00' + '\x80' + '\xff');
    const ImageTensor img = read_image(path);
    CHECK(img.channels == 1);
    CHECK(img.values[0] == doctest::Approx(-1.0).epsilon(1e-15));
    CHECK(img.values[1] == doctest::Approx(128.0 / 127.5 - 1.0).epsilon(1e-15));
    CHECK(img.values[2] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("write then read stays within one quantization step") {
    testsupport::TempDir dir;
    const auto data = testsupport::synthetic_dataset(3, 8, 8, 55);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const std::string path = dir.str("img" + std::to_string(i) + ".pgm");
        write_image(data[i], path);
        const ImageTensor back = read_image(path);
        REQUIRE(back.same_shape(data[i]));
        for (std::size_t j = 0; j < back.size(); ++j)
            CHECK(std::abs(back.values[j] - data[i].values[j]) <= 1.0 / 127.5);
    }
}

TEST_CASE("double round trip equals single round trip bitwise") {
    testsupport::TempDir dir;
    const auto data = testsupport::synthetic_dataset(1, 8, 8, 56);
    write_image(data[0], dir.str("a.pgm"));
    const ImageTensor once = read_image(dir.str("a.pgm"));
    write_image(once, dir.str("b.pgm"));
    CHECK(slurp(dir.str("a.pgm")) == slurp(dir.str("b.pgm")));
    const ImageTensor twice = read_image(dir.str("b.pgm"));
    CHECK(once.values == twice.values);
}

TEST_CASE("color image round trip through the planar layout") {
    testsupport::TempDir dir;
    ImageTensor rgb(2, 2, 3);
    for (std::size_t i = 0; i < rgb.size(); ++i)
        rgb.values[i] = -1.0 + 2.0 * static_cast<double>(i) / (rgb.size() - 1);
    write_image(rgb, dir.str("c.ppm"));
    const ImageTensor back = read_image(dir.str("c.ppm"));
    REQUIRE(back.channels == 3);
    for (std::size_t j = 0; j < back.size(); ++j)
        CHECK(std::abs(back.values[j] - rgb.values[j]) <= 1.0 / 127.5);
}

TEST_CASE("image reader failure modes") {
    testsupport::TempDir dir;
    auto expect = [&](const std::string& name, const std::string& bytes,
                      ImageIoError::Kind kind) {
        spit(dir.str(name), bytes);
        try {
            read_image(dir.str(name));
            FAIL("expected ImageIoError for ", name);
        } catch (const ImageIoError& e) {
            CHECK(e.kind == kind);
        }
    };
    expect("magic.pgm", "P2\n1 1\n255\n0", ImageIoError::Kind::BadMagic);
    expect("maxval.pgm", std::string("P5\n1 1\n65535\n") + '\x00' + '\x00',
           ImageIoError::Kind::BadMaxval);
    expect("short.pgm", "P5\n4 4\n255\nab", ImageIoError::Kind::Truncated);
    expect("header.pgm", "P5\nx 4\n255\n", ImageIoError::Kind::BadHeader);
    try {
        read_image(dir.str("missing.pgm"));
        FAIL("expected ImageIoError");
    } catch (const ImageIoError& e) {
        CHECK(e.kind == ImageIoError::Kind::OpenFailed);
    }
}

TEST_CASE("pgm comments in the header are skipped") {
    testsupport::TempDir dir;
    spit(dir.str("c.pgm"), std::string("P5\n# a comment\n2 1\n# another\n255\n") + '\x00' + '\xff');
    const ImageTensor img = read_image(dir.str("c.pgm"));
    CHECK(img.width == 2);
    CHECK(img.values[0] == doctest::Approx(-1.0));
    CHECK(img.values[1] == doctest::Approx(1.0));
}

TEST_CASE("write_image rejects unsupported channel counts") {
    testsupport::TempDir dir;
    const ImageTensor two(2, 2, 2, 0.0);
    CHECK_THROWS_AS(write_image(two, dir.str("two.pgm")), ImageIoError);
}

TEST_CASE("sha256 of a known vector") {
    // digest of the empty string is a published constant
    CHECK(sha256_hex(nullptr, 0) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    testsupport::TempDir dir;
    spit(dir.str("f.bin"), "abc");
    CHECK(sha256_file(dir.str("f.bin")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("manifest round trip preserves every field") {
    testsupport::TempDir dir;
    const DatasetManifest m = sample_manifest("0123abcd");
    write_manifest(m, dir.str("manifest.json"));
    const DatasetManifest back = read_manifest(dir.str("manifest.json"));
    CHECK(back == m);
    CHECK_FALSE(std::filesystem::exists(dir.str("manifest.json.tmp")));
}

TEST_CASE("manifest failure modes") {
    testsupport::TempDir dir;

    SUBCASE("unsupported version") {
        DatasetManifest m = sample_manifest("x");
        write_manifest(m, dir.str("m.json"));
        std::string text = slurp(dir.str("m.json"));
        const auto pos = text.find("\"format_version\": 1");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 19, "\"format_version\": 9");
        spit(dir.str("m.json"), text);
        try {
            read_manifest(dir.str("m.json"));
            FAIL("expected ManifestError");
        } catch (const ManifestError& e) {
            CHECK(e.kind == ManifestError::Kind::UnsupportedVersion);
        }
    }
    SUBCASE("schema violation") {
        spit(dir.str("m.json"), "{\"format_version\": 1}");
        try {
            read_manifest(dir.str("m.json"));
            FAIL("expected ManifestError");
        } catch (const ManifestError& e) {
            CHECK(e.kind == ManifestError::Kind::Schema);
        }
    }
    SUBCASE("malformed json") {
        spit(dir.str("m.json"), "{nope");
        CHECK_THROWS_AS(read_manifest(dir.str("m.json")), ManifestError);
    }
}

TEST_CASE("trigger digest verification") {
    testsupport::TempDir dir;
    spit(dir.str("trigger.pgm"), "trigger-bytes");
    DatasetManifest m = sample_manifest(sha256_file(dir.str("trigger.pgm")));
    CHECK_NOTHROW(verify_trigger_digest(m, dir.str("trigger.pgm")));

    spit(dir.str("tampered.pgm"), "other-bytes");
    try {
        verify_trigger_digest(m, dir.str("tampered.pgm"));
        FAIL("expected ManifestError");
    } catch (const ManifestError& e) {
        CHECK(e.kind == ManifestError::Kind::DigestMismatch);
    }
}

TEST_CASE("referenced-file presence check") {
    testsupport::TempDir dir;
    DatasetManifest m = sample_manifest("d");
    m.levels = {{1, 1}};
    std::filesystem::create_directories(dir.str("level1"));
    spit(dir.str("level1/img000_sn.pgm"), "x");
    spit(dir.str("level1/img001_sn.pgm"), "x");
    CHECK_NOTHROW(validate_dataset_files(m, dir.str(), false));
    try {
        validate_dataset_files(m, dir.str(), true);  // _p files absent
        FAIL("expected ManifestError");
    } catch (const ManifestError& e) {
        CHECK(e.kind == ManifestError::Kind::MissingFile);
    }
    CHECK(derived_image_path("img000.pgm", 2, "sn") == "level2/img000_sn.pgm");
}

TEST_CASE("directory loading is sorted and filtered") {
    testsupport::TempDir dir;
    const auto data = testsupport::synthetic_dataset(3, 8, 8, 77);
    write_image(data[2], dir.str("c.pgm"));
    write_image(data[0], dir.str("a.pgm"));
    write_image(data[1], dir.str("b.pgm"));
    spit(dir.str("notes.txt"), "ignored");
    const auto loaded = load_image_dir(dir.str());
    REQUIRE(loaded.size() == 3);
    CHECK(loaded[0].first == "a.pgm");
    CHECK(loaded[1].first == "b.pgm");
    CHECK(loaded[2].first == "c.pgm");
}
