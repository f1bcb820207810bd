#include <doctest.h>

#include <stdexcept>

#include <cmath>
#include <filesystem>
#include <random>

#include "nest/binary_io.hpp"
#include "nest/datakit.hpp"

using namespace nest;

namespace {

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("nest_unit_" + name);
}

FormatError::Kind decode_kind(std::vector<std::uint8_t> bytes) {
    try {
        decode_dataset(std::move(bytes));
    } catch (const FormatError& e) {
        return e.kind();
    }
    FAIL("decode succeeded");
    return FormatError::Kind::invalid;
}

}  // namespace

TEST_CASE("synthetic generator is deterministic and zero noise leaves offsets only") {
    SyntheticSpec spec;
    spec.steps = 500;
    spec.noise_sigma = 0.0;
    const SyntheticData a = generate_synthetic(spec), b = generate_synthetic(spec);
    CHECK(a.series.values == b.series.values);
    CHECK(a.series.labels.size() == 48);
    for (std::size_t i = 0; i < 48; ++i) {
        const auto m = static_cast<std::size_t>(a.series.labels[i]);
        for (std::size_t t = 0; t < 500; t += 37)
            CHECK(a.series.at(i, t, 0) == doctest::Approx(a.trends[(m * 500 + t)] + a.offsets[i]).epsilon(1e-12));
    }
    spec.seed = 8;
    CHECK_FALSE(generate_synthetic(spec).series.values == a.series.values);
}

TEST_CASE("synthetic noise variance matches noise_sigma within 5% at T = 10^4") {
    SyntheticSpec spec;
    spec.steps = 10000;
    spec.noise_sigma = 1.3;
    const SyntheticData d = generate_synthetic(spec);
    double sq = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < d.series.nodes(); ++i) {
        const auto m = static_cast<std::size_t>(d.series.labels[i]);
        for (std::size_t t = 0; t < spec.steps; ++t) {
            const double r = d.series.at(i, t, 0) - d.trends[m * spec.steps + t] - d.offsets[i];
            sq += r * r;
            ++n;
        }
    }
    CHECK(std::abs(sq / static_cast<double>(n) / (1.3 * 1.3) - 1.0) < 0.05);
}

TEST_CASE("chronological split 60/20/20") {
    const SplitRanges r = split_ranges(100, SplitSpec{});
    CHECK(r.train.size() == 60);
    CHECK(r.val.size() == 20);
    CHECK(r.test.size() == 20);
    CHECK(r.train.begin == 0);
    CHECK(r.train.end == r.val.begin);
    CHECK(r.val.end == r.test.begin);
    CHECK(r.test.end == 100);
    CHECK_THROWS(split_ranges(100, SplitSpec{}, 25));
    CHECK_THROWS(split_ranges(100, SplitSpec{0.5, 0.2, 0.2}));

    SeriesTensor s(2, 100, 1);
    s.start_offset = 5;
    const Splits sp = chronological_split(s, SplitSpec{});
    CHECK(sp.val.start_offset == 65);
    CHECK(sp.test.steps() == 20);
}

TEST_CASE("normalization round trip, centering and std floor") {
    SyntheticSpec spec;
    spec.steps = 300;
    const SeriesTensor data = generate_synthetic(spec).series;
    const Splits sp = chronological_split(data, SplitSpec{});
    const NormStats stats = fit_normalizer(sp.train);
    const SeriesTensor z = normalize(sp.train, stats);
    for (std::size_t i = 0; i < z.nodes(); ++i) {
        double m = 0.0;
        for (std::size_t t = 0; t < z.steps(); ++t) m += z.at(i, t, 0);
        CHECK(std::abs(m / static_cast<double>(z.steps())) < 1e-10);
    }
    CHECK(max_abs_diff(denormalize(normalize(data, stats), stats).values, data.values) < 1e-10);

    SeriesTensor flat(1, 10, 1);
    flat.values.fill(4.0);
    const NormStats fs = fit_normalizer(flat);
    CHECK(fs.stddev[0] == 1e-8);
    CHECK(normalize(flat, fs).values == Tensor({1, 10, 1}));
}

TEST_CASE("dataset round trip is bitwise and size is exact") {
    SyntheticSpec spec;
    spec.steps = 64;
    spec.channels = 2;
    SeriesTensor s = generate_synthetic(spec).series;
    s.start_offset = 17;
    const auto bytes = encode_dataset(s);
    CHECK(bytes.size() == kDatasetHeaderBytes + 8 * s.values.size() + 8);
    const auto path = temp_file("ds.bin");
    save_dataset(s, path);
    CHECK(std::filesystem::file_size(path) == bytes.size());
    const SeriesTensor back = load_dataset(path);
    CHECK(back.values == s.values);
    CHECK(back.start_offset == 17);
    CHECK(back.steps_per_day == s.steps_per_day);
    CHECK(encode_dataset(back) == bytes);
    std::filesystem::remove(path);
}

TEST_CASE("dataset corruption is reported distinctly") {
    SeriesTensor s(2, 5, 1);
    s.values[3] = 1.25;
    const auto good = encode_dataset(s);

    auto magic = good;
    magic[0] = 'X';
    CHECK(decode_kind(magic) == FormatError::Kind::bad_magic);

    auto truncated = good;
    truncated.resize(truncated.size() - 11);
    CHECK(decode_kind(truncated) == FormatError::Kind::truncated);
    CHECK(decode_kind(std::vector<std::uint8_t>(good.begin(), good.begin() + 12)) == FormatError::Kind::truncated);

    auto flipped = good;
    flipped[kDatasetHeaderBytes + 3] ^= 0x10;
    CHECK(decode_kind(flipped) == FormatError::Kind::checksum_mismatch);

    CHECK_THROWS_AS(load_dataset(temp_file("does_not_exist")), std::runtime_error);
}

TEST_CASE("fnv1a reference values") {
    CHECK(fnv1a64({}) == 0xcbf29ce484222325ULL);
    const std::uint8_t a[] = {'a'};
    CHECK(fnv1a64(a) == 0xaf63dc4c8601ec8cULL);
}
