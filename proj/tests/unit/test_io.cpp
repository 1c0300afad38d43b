#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "cxvae/io.hpp"
#include "cxvae/rng.hpp"

using namespace cxvae;
using namespace cxvae::io;
namespace fs = std::filesystem;

namespace {

std::string tmp(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "cxvae_unit_io";
    fs::create_directories(dir);
    return (dir / name).string();
}

void write_raw(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

}  // namespace

TEST(Format, SeventeenDigitsRoundTrip) {
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double v = std::ldexp(rng.uniform() - 0.5, static_cast<int>(rng.below(200)) - 100);
        EXPECT_EQ(parse_double(fmt(v), "v"), v);
    }
    EXPECT_EQ(fmt(0.1), "0.10000000000000001");
}

TEST(Format, ParseErrorsNameTheContext) {
    try {
        parse_double("1.5x", "row 3, column c");
        FAIL();
    } catch (const IoError& e) {
        EXPECT_NE(std::string(e.what()).find("row 3"), std::string::npos);
    }
    EXPECT_THROW(parse_long("2.5", "id"), IoError);
    EXPECT_EQ(parse_long("-42", "id"), -42);
}

TEST(Fields, RoundTripIsBitExact) {
    Matrix m(3, 2);
    m << 1.0 / 3, 2e-300, 5.5, 7e200, 0.1, 1.0;
    write_fields(tmp("f.csv"), m, {10, 42});
    const auto f = read_fields(tmp("f.csv"));
    EXPECT_EQ(f.ids, (std::vector<long>{10, 42}));
    EXPECT_EQ(std::memcmp(f.values.data(), m.data(), sizeof(double) * 6), 0);
    std::ifstream in(tmp("f.csv"));
    std::string header;
    std::getline(in, header);
    EXPECT_EQ(header, "time_index,site_10,site_42");
}

TEST(Fields, MalformedInputs) {
    write_raw(tmp("bad1.csv"), "time_index,site_1\n0,1.0\n1\n");
    EXPECT_THROW(read_fields(tmp("bad1.csv")), IoError);
    write_raw(tmp("bad2.csv"), "time,site_1\n0,1.0\n");
    EXPECT_THROW(read_fields(tmp("bad2.csv")), IoError);
    write_raw(tmp("bad3.csv"), "time_index,site_1\n0,abc\n");
    EXPECT_THROW(read_fields(tmp("bad3.csv")), IoError);
    EXPECT_THROW(read_fields(tmp("does_not_exist.csv")), IoError);
}

TEST(Sites, RoundTripKeepsRegularMetadata) {
    const auto g = sim::regular_grid(2, 3, 0.5);
    write_sites(tmp("s.csv"), g);
    const auto back = read_sites(tmp("s.csv"));
    EXPECT_EQ(back.ids, g.ids);
    ASSERT_TRUE(back.regular.has_value());
    EXPECT_EQ(back.regular->cols, 3);
    EXPECT_EQ(back.regular->side, 0.5);
    EXPECT_EQ(back.sites[4].x, g.sites[4].x);
    fs::remove(tmp("s.csv") + ".json");
    EXPECT_FALSE(read_sites(tmp("s.csv")).regular.has_value());
}

TEST(Condition, RoundTrip) {
    const std::vector<double> c{0.0, 0.123456789012345678, 1.0};
    write_condition(tmp("c.csv"), c);
    EXPECT_EQ(read_condition(tmp("c.csv")), c);
}

TEST(Table, ColumnLookup) {
    Table t{{"a", "b"}, {{"1", "2"}}};
    write_table(tmp("t.csv"), t);
    const auto back = read_table(tmp("t.csv"));
    EXPECT_EQ(back.column("b"), 1u);
    EXPECT_THROW((void)back.column("zz"), IoError);
}

TEST(Base64, KnownVectors) {
    auto enc = [](const std::string& s) {
        return base64_encode(std::span(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
    };
    EXPECT_EQ(enc(""), "");
    EXPECT_EQ(enc("f"), "Zg==");
    EXPECT_EQ(enc("fo"), "Zm8=");
    EXPECT_EQ(enc("foobar"), "Zm9vYmFy");
    const auto d = base64_decode("Zm9vYg==");
    EXPECT_EQ(std::string(d.begin(), d.end()), "foob");
    EXPECT_THROW(base64_decode("Zm9v*A=="), IoError);
}

TEST(Base64, DoublesRoundTrip) {
    const std::vector<double> v{1.0, -0.0, std::numeric_limits<double>::denorm_min(), 1e308,
                                std::numeric_limits<double>::infinity()};
    const auto back = decode_doubles(encode_doubles(v));
    ASSERT_EQ(back.size(), v.size());
    EXPECT_EQ(std::memcmp(back.data(), v.data(), sizeof(double) * v.size()), 0);
    EXPECT_EQ(encode_doubles(std::vector<double>{1.0}), "AAAAAAAA8D8=");  // little-endian 0x3FF0000000000000
}

TEST(Hash, Fnv1aVectors) {
    EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ull);
    const std::string a = "a";
    EXPECT_EQ(fnv1a64(std::span(reinterpret_cast<const std::uint8_t*>(a.data()), 1)), 0xaf63dc4c8601ec8cull);
}

TEST(Manifest, RecordsInputsAndOutputs) {
    write_text(tmp("in.txt"), "hello");
    write_text(tmp("out.txt"), "world");
    write_manifest(tmp("manifest.json"), "simulate", 7, {tmp("in.txt")}, {tmp("out.txt")}, {{"note", 1}});
    const auto j = read_json(tmp("manifest.json"));
    EXPECT_EQ(j.at("command"), "simulate");
    EXPECT_EQ(j.at("seed"), 7);
    EXPECT_EQ(j.at("version"), kVersion);
    EXPECT_EQ(j.at("inputs").size(), 1u);
    EXPECT_EQ(j.at("outputs").size(), 1u);
    EXPECT_EQ(j.at("extra").at("note"), 1);
}

TEST(Json, ReadErrors) {
    write_raw(tmp("bad.json"), "{ not json");
    EXPECT_THROW(read_json(tmp("bad.json")), IoError);
    EXPECT_THROW(read_json(tmp("nope.json")), IoError);
}
