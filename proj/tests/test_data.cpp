#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "onval/data.hpp"

using namespace onval;

namespace {

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("onval_data_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("zero spread puts every sample on its class center") {
    const auto samples = generate_blobs({4, 1, 5, 0.0, 3.0}, 12);
    REQUIRE(samples.size() == 4);
    const auto again = generate_blobs({4, 3, 5, 0.0, 3.0}, 12);
    for (const auto& s : again) CHECK(s.features == samples[s.label].features);
    for (const auto& s : samples)
        for (double v : s.features) CHECK(std::abs(v) <= 3.0);
}

TEST_CASE("blob layout depends on the seed only") {
    const BlobParams p{3, 10, 4, 1.0, 3.0};
    const auto a = generate_blobs(p, 1);
    const auto b = generate_blobs(p, 1);
    const auto c = generate_blobs(p, 2);
    CHECK(a.size() == 30);
    for (std::size_t k = 0; k < a.size(); ++k) {
        CHECK(a[k].features == b[k].features);
        CHECK(a[k].id == static_cast<std::int64_t>(k));
    }
    CHECK(a[0].features != c[0].features);

    const auto dir = scratch_dir("seed");
    write_csv(dir / "a.csv", a);
    write_csv(dir / "b.csv", b);
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));
}

TEST_CASE("label noise flips an exact count to a different class") {
    const auto clean = generate_blobs({3, 200, 2, 1.0, 3.0}, 5);

    SUBCASE("rate zero") {
        const auto out = inject_label_noise(clean, 0.0, 3, 1);
        for (std::size_t k = 0; k < out.size(); ++k) {
            CHECK(out[k].label == clean[k].label);
            CHECK_FALSE(out[k].noisy);
        }
    }
    SUBCASE("rate one") {
        const auto out = inject_label_noise(clean, 1.0, 3, 1);
        for (std::size_t k = 0; k < out.size(); ++k) {
            CHECK(out[k].label != clean[k].label);
            CHECK(out[k].label < 3);
            CHECK(out[k].noisy);
        }
    }
    SUBCASE("forty percent of a thousand") {
        const auto base = generate_blobs({4, 250, 2, 1.0, 3.0}, 6);
        const auto out = inject_label_noise(base, 0.4, 4, 9);
        std::size_t flagged = 0;
        std::size_t changed = 0;
        for (std::size_t k = 0; k < out.size(); ++k) {
            flagged += out[k].noisy;
            changed += out[k].label != base[k].label;
        }
        CHECK(flagged == 400);
        CHECK(changed == 400);
    }
    SUBCASE("two classes always flip to the other one") {
        const auto two = generate_blobs({2, 50, 2, 1.0, 3.0}, 6);
        for (const auto& s : inject_label_noise(two, 1.0, 2, 4)) CHECK(s.label == (s.id < 50 ? 1u : 0u));
    }
    CHECK_THROWS(inject_label_noise(clean, 1.5, 3, 1));
}

TEST_CASE("split sizes, determinism and coverage") {
    const auto samples = generate_blobs({3, 40, 3, 1.0, 3.0}, 2);
    const DatasetBundle a = split(samples, {0.6, 0.2, 0.2}, 8);
    const DatasetBundle b = split(samples, {0.6, 0.2, 0.2}, 8);
    CHECK(a.train.size() == 72);
    CHECK(a.validation.size() == 24);
    CHECK(a.test.size() == 24);
    for (std::size_t k = 0; k < a.train.size(); ++k) CHECK(a.train[k].id == b.train[k].id);

    std::vector<std::int64_t> ids;
    for (const auto* part : {&a.train, &a.validation, &a.test})
        for (const auto& s : *part) ids.push_back(s.id);
    std::sort(ids.begin(), ids.end());
    std::vector<std::int64_t> expected(samples.size());
    for (std::size_t k = 0; k < expected.size(); ++k) expected[k] = samples[k].id;
    CHECK(ids == expected);
}

TEST_CASE("split refuses empty partitions and bad fractions") {
    const auto ten = generate_blobs({2, 5, 2, 1.0, 3.0}, 2);
    CHECK_THROWS(split(ten, {0.98, 0.01, 0.01}, 1));
    const DatasetBundle ok = split(ten, {0.8, 0.1, 0.1}, 1);
    CHECK(ok.validation.size() >= 1);
    CHECK(ok.test.size() >= 1);
    CHECK_THROWS(split(ten, {0.5, 0.5, 0.0}, 1));
    CHECK_THROWS(split(ten, {0.5, 0.3, 0.3}, 1));
}

TEST_CASE("CSV parsing") {
    SUBCASE("one row") {
        const auto s = parse_csv("id,f1,f2,label\n0,1.0,2.0,1\n");
        REQUIRE(s.size() == 1);
        CHECK(s[0].id == 0);
        CHECK(s[0].features == Vec{1.0, 2.0});
        CHECK(s[0].label == 1);
    }
    SUBCASE("empty body") { CHECK(parse_csv("id,f1,label\n").empty()); }
    SUBCASE("errors name the offending line") {
        auto line_of = [](const std::string& text) {
            try {
                parse_csv(text);
            } catch (const ParseError& e) {
                return e.line;
            }
            return std::size_t{0};
        };
        CHECK(line_of("id,f1,label\n0,1.0,0\n1,2.0\n") == 3);
        CHECK(line_of("id,f1,label\n0,abc,0\n") == 2);
        CHECK(line_of("id,f1,label\n0,1,0\n0,2,1\n") == 3);
        CHECK(line_of("x,f1,label\n") == 1);
        CHECK(line_of("") == 1);
    }
}

TEST_CASE("CSV round trip is bit-exact") {
    const DatasetBundle bundle = synthetic_bundle({3, 30, 6, 1.3, 3.0}, 0.2, {0.6, 0.2, 0.2}, 77);
    const auto dir = scratch_dir("roundtrip");
    write_csv(dir / "train.csv", bundle.train);
    const auto back = load_csv(dir / "train.csv");
    REQUIRE(back.size() == bundle.train.size());
    for (std::size_t k = 0; k < back.size(); ++k) {
        CHECK(back[k].id == bundle.train[k].id);
        CHECK(back[k].features == bundle.train[k].features);
        CHECK(back[k].label == bundle.train[k].label);
    }
    CHECK_THROWS(load_csv(dir / "missing.csv"));
}

TEST_CASE("synthetic bundle puts noise on the training split only") {
    const DatasetBundle b = synthetic_bundle({3, 100, 4, 1.0, 3.0}, 0.4, {0.6, 0.2, 0.2}, 3);
    CHECK(b.flipped == 72);
    for (const auto& s : b.validation) CHECK_FALSE(s.noisy);
    for (const auto& s : b.test) CHECK_FALSE(s.noisy);
    const auto m = manifest(b);
    CHECK(m["flipped"] == 72);
    CHECK(m["counts"]["train"] == 180);
    CHECK(m["num_classes"] == 3);
}
