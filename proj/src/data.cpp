#include "onval/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

namespace onval {

namespace {

// Independent streams per pipeline stage, all derived from one seed.
std::mt19937_64 stage_rng(std::uint64_t seed, std::uint64_t stage) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stage)};
    return std::mt19937_64(seq);
}

std::vector<std::string_view> split_fields(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <typename T>
bool parse_number(std::string_view text, T& out) {
    const char* first = text.data();
    const char* last = text.data() + text.size();
    if constexpr (std::is_floating_point_v<T>) {
        if (!text.empty() && *first == '+') ++first;
    }
    const auto [ptr, ec] = std::from_chars(first, last, out);
    return ec == std::errc{} && ptr == last && first != last;
}

}  // namespace

std::vector<Sample> generate_blobs(const BlobParams& params, std::uint64_t seed) {
    if (params.num_classes == 0 || params.per_class == 0 || params.feature_dim == 0) {
        throw std::invalid_argument("generate_blobs: counts must be positive");
    }
    auto rng = stage_rng(seed, 1);
    std::uniform_real_distribution<double> center_dist(-params.center_scale, params.center_scale);
    std::normal_distribution<double> noise(0.0, 1.0);

    std::vector<Vec> centers(params.num_classes, Vec(params.feature_dim));
    for (auto& c : centers)
        for (auto& v : c) v = center_dist(rng);

    std::vector<Sample> out;
    out.reserve(params.num_classes * params.per_class);
    std::int64_t next_id = 0;
    for (std::size_t k = 0; k < params.num_classes; ++k) {
        for (std::size_t i = 0; i < params.per_class; ++i) {
            Sample s{next_id++, centers[k], k, false};
            if (params.spread > 0.0)
                for (auto& v : s.features) v += params.spread * noise(rng);
            out.push_back(std::move(s));
        }
    }
    return out;
}

std::vector<Sample> inject_label_noise(std::vector<Sample> samples, double flip_rate, std::size_t num_classes,
                                       std::uint64_t seed) {
    if (!(flip_rate >= 0.0 && flip_rate <= 1.0)) throw std::invalid_argument("inject_label_noise: flip_rate outside [0,1]");
    const auto n_flip = static_cast<std::size_t>(std::floor(flip_rate * static_cast<double>(samples.size())));
    if (n_flip > 0 && num_classes < 2) throw std::invalid_argument("inject_label_noise: need at least 2 classes to flip");
    auto rng = stage_rng(seed, 2);
    std::vector<std::size_t> order(samples.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::uniform_int_distribution<std::size_t> other(0, num_classes >= 2 ? num_classes - 2 : 0);
    for (std::size_t k = 0; k < n_flip; ++k) {
        Sample& s = samples[order[k]];
        // Draw from the num_classes-1 labels that are not the current one.
        std::size_t label = other(rng);
        if (label >= s.label) ++label;
        s.label = label;
        s.noisy = true;
    }
    return samples;
}

DatasetBundle split(std::vector<Sample> samples, std::array<double, 3> fractions, std::uint64_t seed) {
    for (double f : fractions) {
        if (!(f > 0.0)) throw std::invalid_argument("split: fractions must be positive");
    }
    if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9) {
        throw std::invalid_argument("split: fractions must sum to 1");
    }
    const std::size_t n = samples.size();
    const auto n_train = static_cast<std::size_t>(std::floor(fractions[0] * static_cast<double>(n)));
    const auto n_val = static_cast<std::size_t>(std::floor(fractions[1] * static_cast<double>(n)));
    const std::size_t n_test = n - std::min(n, n_train + n_val);
    if (n_train == 0 || n_val == 0 || n_test == 0 || n_train + n_val > n) {
        throw std::invalid_argument(fmt::format("split: empty split (train {}, validation {}, test {})", n_train, n_val,
                                                n_test));
    }
    auto rng = stage_rng(seed, 3);
    std::shuffle(samples.begin(), samples.end(), rng);

    DatasetBundle bundle;
    bundle.seed = seed;
    bundle.fractions = fractions;
    for (const auto& s : samples) {
        bundle.num_classes = std::max(bundle.num_classes, s.label + 1);
        bundle.feature_dim = s.features.size();
    }
    auto first = samples.begin();
    bundle.train.assign(std::make_move_iterator(first), std::make_move_iterator(first + static_cast<std::ptrdiff_t>(n_train)));
    first += static_cast<std::ptrdiff_t>(n_train);
    bundle.validation.assign(std::make_move_iterator(first), std::make_move_iterator(first + static_cast<std::ptrdiff_t>(n_val)));
    first += static_cast<std::ptrdiff_t>(n_val);
    bundle.test.assign(std::make_move_iterator(first), std::make_move_iterator(samples.end()));
    return bundle;
}

DatasetBundle synthetic_bundle(const BlobParams& params, double flip_rate, std::array<double, 3> fractions,
                               std::uint64_t seed) {
    DatasetBundle bundle = split(generate_blobs(params, seed), fractions, seed);
    bundle.num_classes = params.num_classes;
    bundle.feature_dim = params.feature_dim;
    bundle.train = inject_label_noise(std::move(bundle.train), flip_rate, params.num_classes, seed);
    bundle.noise_rate = flip_rate;
    bundle.flipped = static_cast<std::size_t>(
        std::count_if(bundle.train.begin(), bundle.train.end(), [](const Sample& s) { return s.noisy; }));
    return bundle;
}

void write_csv(const std::filesystem::path& path, std::span<const Sample> samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    const std::size_t dim = samples.empty() ? 0 : samples.front().features.size();
    std::string line = "id";
    for (std::size_t k = 1; k <= dim; ++k) line += fmt::format(",f{}", k);
    out << line << ",label\n";
    for (const auto& s : samples) {
        line = fmt::format("{}", s.id);
        for (double v : s.features) line += fmt::format(",{:.17g}", v);
        out << line << ',' << s.label << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::vector<Sample> parse_csv(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    if (!std::getline(in, line)) throw ParseError("missing header", 1);
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_fields(line);
    if (header.size() < 2 || header.front() != "id" || header.back() != "label") {
        throw ParseError("header must be id,f1,...,fd,label", line_no);
    }
    const std::size_t dim = header.size() - 2;

    std::vector<Sample> out;
    std::unordered_set<std::int64_t> seen;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_fields(line);
        if (fields.size() != header.size()) {
            throw ParseError(fmt::format("ragged row: {} fields, header has {}", fields.size(), header.size()), line_no);
        }
        Sample s;
        if (!parse_number(fields.front(), s.id)) throw ParseError("non-numeric id", line_no);
        s.features.resize(dim);
        for (std::size_t k = 0; k < dim; ++k) {
            if (!parse_number(fields[k + 1], s.features[k]) || !std::isfinite(s.features[k])) {
                throw ParseError(fmt::format("non-numeric feature f{}", k + 1), line_no);
            }
        }
        if (!parse_number(fields.back(), s.label)) throw ParseError("non-numeric label", line_no);
        if (!seen.insert(s.id).second) throw ParseError(fmt::format("duplicate id {}", s.id), line_no);
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<Sample> load_csv(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_csv(buf.str());
}

nlohmann::json manifest(const DatasetBundle& bundle) {
    return {{"seed", bundle.seed},
            {"fractions", bundle.fractions},
            {"flip_rate", bundle.noise_rate},
            {"flipped", bundle.flipped},
            {"num_classes", bundle.num_classes},
            {"feature_dim", bundle.feature_dim},
            {"counts", {{"train", bundle.train.size()}, {"validation", bundle.validation.size()}, {"test", bundle.test.size()}}}};
}

}  // namespace onval
