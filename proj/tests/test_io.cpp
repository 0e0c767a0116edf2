#include <catch2/catch_amalgamated.hpp>

#include <zlib.h>

#include "test_support.hpp"
#include "trisplat/io/config.hpp"
#include "trisplat/io/pfm.hpp"
#include "trisplat/io/ply.hpp"
#include "trisplat/io/png.hpp"

using namespace ts;

TEST_CASE("pfm round trip gray and rgb") {
    auto rng = oracle::test_rng(229);
    ImageF gray(17, 13);
    for (size_t i = 0; i < gray.size(); ++i) gray[i] = rng.uniform(-5, 5);
    write_pfm("/tmp/trisplat_test.pfm", gray);
    ImageF back = read_pfm_gray("/tmp/trisplat_test.pfm");
    REQUIRE(back.same_size(17, 13));
    for (size_t i = 0; i < gray.size(); ++i)
        CHECK(back[i] == static_cast<float>(gray[i]));  // float32 exact

    ImageV3 rgb(9, 7);
    for (size_t i = 0; i < rgb.size(); ++i) rgb[i] = rng.uniform_vec3(0, 1);
    write_pfm("/tmp/trisplat_test_rgb.pfm", rgb);
    ImageV3 back3 = read_pfm_rgb("/tmp/trisplat_test_rgb.pfm");
    for (size_t i = 0; i < rgb.size(); ++i) {
        CHECK(back3[i].x == static_cast<float>(rgb[i].x));
        CHECK(back3[i].z == static_cast<float>(rgb[i].z));
    }
}

TEST_CASE("png writer emits a decodable image") {
    ImageV3 img(20, 10);
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 20; ++x) img.at(x, y) = {x / 19.0, y / 9.0, 0.5};
    write_png_rgb("/tmp/trisplat_test.png", img);

    std::ifstream f("/tmp/trisplat_test.png", std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.size() > 50);
    const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    CHECK(std::memcmp(bytes.data(), sig, 8) == 0);

    // parse IHDR dims and inflate the IDAT payload
    auto u32 = [&](size_t off) {
        return (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off])) << 24) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 1])) << 16) |
               (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 2])) << 8) |
               static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[off + 3]));
    };
    CHECK(u32(16) == 20);
    CHECK(u32(20) == 10);
    size_t p = 8;
    std::string idat;
    while (p + 8 <= bytes.size()) {
        std::uint32_t len = u32(p);
        std::string type = bytes.substr(p + 4, 4);
        if (type == "IDAT") idat += bytes.substr(p + 8, len);
        p += 12 + len;
    }
    REQUIRE(!idat.empty());
    std::vector<unsigned char> raw(10 * (1 + 3 * 20));
    uLongf out_size = raw.size();
    REQUIRE(uncompress(raw.data(), &out_size,
                       reinterpret_cast<const Bytef*>(idat.data()),
                       static_cast<uLong>(idat.size())) == Z_OK);
    REQUIRE(out_size == raw.size());
    CHECK(raw[0] == 0);  // filter byte
    CHECK(raw[1] == 0);  // r of pixel (0,0)
    CHECK(raw[3] == 128);  // b of pixel (0,0) = 0.5
}

TEST_CASE("ply round trips with confidence") {
    auto rng = oracle::test_rng(233);
    std::vector<Vec3> pts;
    std::vector<double> conf;
    for (int i = 0; i < 100; ++i) {
        pts.push_back(rng.uniform_vec3(-3, 3));
        conf.push_back(rng.uniform(0, 1));
    }
    for (bool binary : {true, false}) {
        std::string path = binary ? "/tmp/trisplat_b.ply" : "/tmp/trisplat_a.ply";
        write_ply_points(path, pts, &conf, binary);
        PlyPoints back = read_ply_points(path);
        REQUIRE(back.points.size() == pts.size());
        for (size_t i = 0; i < pts.size(); ++i) {
            CHECK(std::fabs(back.points[i].x - pts[i].x) < 1e-6);
            CHECK(std::fabs(back.confidence[i] - conf[i]) < 1e-6);
        }
    }
}

TEST_CASE("config parsing, types, and schema validation") {
    std::string text =
        "# run settings\n"
        "mapper.tau_a = 0.15\n"
        "synth.frames = 80\n"
        "mapper.spatial_filter = false\n"
        "run.name = demo\n";
    Config c = Config::parse_string(text, "test.cfg");
    CHECK(c.get_double("mapper.tau_a", 0.1) == 0.15);
    CHECK(c.get_int("synth.frames", 120) == 80);
    CHECK(c.get_bool("mapper.spatial_filter", true) == false);
    CHECK(c.get_string("run.name", "") == "demo");
    CHECK(c.get_double("absent", 7.5) == 7.5);

    // unknown key names key and line
    try {
        c.validate({"mapper.tau_a", "synth.frames", "mapper.spatial_filter"});
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        std::string msg = e.what();
        CHECK(msg.find("run.name") != std::string::npos);
        CHECK(msg.find(":5") != std::string::npos);
    }

    CHECK_THROWS_AS(Config::parse_string("key value\n"), ConfigError);
    Config bad = Config::parse_string("x = notanumber\n");
    CHECK_THROWS_AS(bad.get_double("x", 0), ConfigError);
    CHECK_THROWS_AS(Config::parse_string("a = 1\n").validate({}), ConfigError);
}

TEST_CASE("fnv1a content hash is stable and sensitive") {
    std::string a = "hello world";
    std::uint64_t h1 = fnv1a(a.data(), a.size());
    std::uint64_t h2 = fnv1a(a.data(), a.size());
    CHECK(h1 == h2);
    std::string b = "hello worle";
    CHECK(fnv1a(b.data(), b.size()) != h1);
}
