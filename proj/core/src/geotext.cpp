#include "wisk/geotext.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <sstream>

#include <nlohmann/json.hpp>

namespace wisk {

using json = nlohmann::json;

void normalize(KeywordSet& kws) {
    std::sort(kws.begin(), kws.end());
    kws.erase(std::unique(kws.begin(), kws.end()), kws.end());
}

bool intersects(std::span<const KeywordId> a, std::span<const KeywordId> b) {
    auto i = a.begin();
    auto j = b.begin();
    while (i != a.end() && j != b.end()) {
        if (*i < *j) {
            ++i;
        } else if (*j < *i) {
            ++j;
        } else {
            return true;
        }
    }
    return false;
}

std::string_view to_string(Distribution d) {
    switch (d) {
        case Distribution::Uni: return "UNI";
        case Distribution::Lap: return "LAP";
        case Distribution::Gau: return "GAU";
        case Distribution::Mix: return "MIX";
    }
    return "UNI";
}

Distribution parse_distribution(std::string_view s) {
    std::string u(s);
    std::transform(u.begin(), u.end(), u.begin(), [](unsigned char c) { return std::toupper(c); });
    if (u == "UNI") return Distribution::Uni;
    if (u == "LAP") return Distribution::Lap;
    if (u == "GAU") return Distribution::Gau;
    if (u == "MIX") return Distribution::Mix;
    throw std::invalid_argument("unknown workload distribution: " + std::string(s));
}

// ---------------------------------------------------------------------------
// Dictionary / Dataset

KeywordId Dictionary::intern(std::string_view word) {
    auto it = ids_.find(std::string(word));
    if (it != ids_.end()) return it->second;
    const auto id = static_cast<KeywordId>(words_.size());
    words_.emplace_back(word);
    ids_.emplace(words_.back(), id);
    return id;
}

std::optional<KeywordId> Dictionary::find(std::string_view word) const {
    auto it = ids_.find(std::string(word));
    if (it == ids_.end()) return std::nullopt;
    return it->second;
}

std::uint64_t Dictionary::hash() const {
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& w : words_) {
        for (unsigned char c : w) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        h ^= 0xff;
        h *= 1099511628211ULL;
    }
    return h;
}

Dataset::Dataset(std::vector<GeoObject> objects, Dictionary dict)
    : objects_(std::move(objects)), dict_(std::move(dict)), freq_(dict_.size(), 0) {
    bool dense = true;
    for (std::size_t i = 0; i < objects_.size(); ++i) {
        auto& o = objects_[i];
        if (!std::isfinite(o.loc.x) || !std::isfinite(o.loc.y))
            throw std::invalid_argument("object " + std::to_string(o.id) + " has a non-finite location");
        normalize(o.kws);
        if (o.kws.empty())
            throw std::invalid_argument("object " + std::to_string(o.id) + " has no keywords");
        for (KeywordId k : o.kws) {
            if (k >= freq_.size())
                throw std::invalid_argument("object " + std::to_string(o.id) + " uses unknown keyword id " +
                                            std::to_string(k));
            ++freq_[k];
        }
        space_.expand(o.loc);
        if (o.id != i) dense = false;
    }
    if (!dense) {
        sparse_ids_.reserve(objects_.size());
        for (std::size_t i = 0; i < objects_.size(); ++i) {
            if (!sparse_ids_.emplace(objects_[i].id, i).second)
                throw std::invalid_argument("duplicate object id " + std::to_string(objects_[i].id));
        }
    }
}

const GeoObject& Dataset::object(ObjectId id) const {
    if (sparse_ids_.empty()) return objects_.at(id);
    return objects_[sparse_ids_.at(id)];
}

bool Dataset::has_object(ObjectId id) const {
    if (sparse_ids_.empty()) return id < objects_.size();
    return sparse_ids_.contains(id);
}

std::vector<std::size_t> Dataset::spatial_order() const {
    std::vector<std::size_t> order(objects_.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        const auto& pa = objects_[a].loc;
        const auto& pb = objects_[b].loc;
        return pa.x < pb.x || (pa.x == pb.x && pa.y < pb.y);
    });
    return order;
}

// ---------------------------------------------------------------------------
// Loading

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    cur.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                cur.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (quoted) throw ParseError("line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(std::move(cur));
    return fields;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
}

std::optional<double> parse_double(std::string_view s) {
    s = trim(s);
    if (s.empty()) return std::nullopt;
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size() || !std::isfinite(v)) return std::nullopt;
    return v;
}

KeywordSet intern_tokens(std::string_view text, Dictionary& dict) {
    KeywordSet kws;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) kws.push_back(dict.intern(text.substr(i, j - i)));
        i = j;
    }
    normalize(kws);
    return kws;
}

template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        std::size_t end = text.find('\n', pos);
        if (end == std::string_view::npos) end = text.size();
        std::string_view line = text.substr(pos, end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        ++line_no;
        fn(line, line_no);
        if (end == text.size()) break;
        pos = end + 1;
    }
}

}  // namespace

Dataset parse_dataset(std::string_view text, DatasetFormat format) {
    Dictionary dict;
    std::vector<GeoObject> objects;
    bool first_record = true;

    for_each_line(text, [&](std::string_view line, std::size_t line_no) {
        if (trim(line).empty()) return;
        const auto fail = [&](const std::string& why) {
            throw ParseError("line " + std::to_string(line_no) + ": " + why);
        };
        GeoObject o;
        o.id = static_cast<ObjectId>(objects.size());
        if (format == DatasetFormat::Csv) {
            auto fields = split_csv_line(line, line_no);
            if (fields.size() != 4) fail("expected 4 fields id,x,y,keywords, got " + std::to_string(fields.size()));
            auto x = parse_double(fields[1]);
            auto y = parse_double(fields[2]);
            if (!x || !y) {
                // A non-numeric first row is a header.
                if (first_record) {
                    first_record = false;
                    return;
                }
                fail("coordinates are not finite numbers");
            }
            o.loc = {*x, *y};
            o.kws = intern_tokens(fields[3], dict);
        } else {
            json rec;
            try {
                rec = json::parse(line);
            } catch (const json::exception& e) {
                fail(std::string("invalid JSON: ") + e.what());
            }
            if (!rec.is_object() || !rec.contains("x") || !rec.contains("y") || !rec.contains("kws"))
                fail("record needs keys \"x\", \"y\", \"kws\"");
            if (!rec["x"].is_number() || !rec["y"].is_number()) fail("coordinates must be numbers");
            o.loc = {rec["x"].get<double>(), rec["y"].get<double>()};
            if (!std::isfinite(o.loc.x) || !std::isfinite(o.loc.y)) fail("coordinates are not finite");
            const auto& kws = rec["kws"];
            if (kws.is_string()) {
                o.kws = intern_tokens(kws.get<std::string>(), dict);
            } else if (kws.is_array()) {
                for (const auto& k : kws) {
                    if (!k.is_string()) fail("keywords must be strings");
                    const auto s = k.get<std::string>();
                    if (!trim(s).empty()) o.kws.push_back(dict.intern(trim(s)));
                }
                normalize(o.kws);
            } else {
                fail("\"kws\" must be a string or an array of strings");
            }
        }
        first_record = false;
        if (o.kws.empty()) fail("record has no keywords");
        objects.push_back(std::move(o));
    });

    if (objects.empty()) throw EmptyDatasetError();
    return Dataset(std::move(objects), std::move(dict));
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format) {
    if (!std::filesystem::exists(path)) throw std::runtime_error("dataset file not found: " + path.string());
    return parse_dataset(read_file(path), format);
}

void write_dataset_csv(const Dataset& ds, const std::filesystem::path& path) {
    std::ostringstream out;
    out.precision(17);
    out << "id,x,y,keywords\n";
    for (const auto& o : ds.objects()) {
        out << o.id << ',' << o.loc.x << ',' << o.loc.y << ",\"";
        for (std::size_t i = 0; i < o.kws.size(); ++i) {
            if (i) out << ' ';
            out << ds.dict().word(o.kws[i]);
        }
        out << "\"\n";
    }
    write_file(path, out.str());
}

// ---------------------------------------------------------------------------
// Keyword statistics

FrequencyClass keyword_frequency_class(const Dataset& ds, KeywordId k, const FrequencyThresholds& t) {
    if (k >= ds.dict().size()) throw std::invalid_argument("unknown keyword id " + std::to_string(k));
    const double ratio = static_cast<double>(ds.freq(k)) / static_cast<double>(ds.size());
    if (ratio <= t.low) return FrequencyClass::Low;
    if (ratio >= t.high) return FrequencyClass::High;
    return FrequencyClass::Medium;
}

std::string_view to_string(FrequencyClass c) {
    switch (c) {
        case FrequencyClass::Low: return "low";
        case FrequencyClass::Medium: return "medium";
        case FrequencyClass::High: return "high";
    }
    return "low";
}

// ---------------------------------------------------------------------------
// Workload generation

namespace {

std::size_t sample_center(Distribution d, std::size_t n, double mix_ratio, std::mt19937_64& rng) {
    const double nd = static_cast<double>(n);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (d == Distribution::Mix) d = unit(rng) < mix_ratio ? Distribution::Uni : Distribution::Lap;
    switch (d) {
        case Distribution::Lap: {
            const double mu = nd / 2.0;
            const double b = nd / 10.0;
            for (;;) {
                // Inverse CDF of Laplace(mu, b).
                const double u = unit(rng) - 0.5;
                const double v = mu - b * std::copysign(1.0, u) * std::log1p(-2.0 * std::abs(u));
                if (v >= 0.0 && v < nd) return std::min(static_cast<std::size_t>(v), n - 1);
            }
        }
        case Distribution::Gau: {
            std::normal_distribution<double> g(nd / 2.0, 100.0);
            for (;;) {
                const double v = g(rng);
                if (v >= 0.0 && v < nd) return std::min(static_cast<std::size_t>(v), n - 1);
            }
        }
        default: {
            std::uniform_int_distribution<std::size_t> pick(0, n - 1);
            return pick(rng);
        }
    }
}

}  // namespace

Workload generate_workload(const Dataset& ds, const WorkloadSpec& spec) {
    if (ds.empty()) throw std::invalid_argument("generate_workload: dataset is empty");
    if (spec.count == 0) throw std::invalid_argument("generate_workload: count must be positive");
    if (!(spec.region_fraction > 0.0 && spec.region_fraction <= 1.0))
        throw std::invalid_argument("generate_workload: region_fraction must be in (0, 1]");
    if (spec.num_keywords == 0) throw std::invalid_argument("generate_workload: num_keywords must be >= 1");

    const auto order = ds.spatial_order();
    const Rect& space = ds.space();
    const double side = std::sqrt(spec.region_fraction * space.area());
    const std::size_t dict_size = ds.dict().size();
    const std::size_t want_keys = std::min(spec.num_keywords, dict_size);

    std::mt19937_64 rng(spec.rng_seed);
    Workload w;
    w.queries.reserve(spec.count);
    for (std::size_t i = 0; i < spec.count; ++i) {
        const GeoObject& center = ds.objects()[order[sample_center(spec.distribution, ds.size(), spec.mix_ratio, rng)]];
        Query q;
        q.id = static_cast<QueryId>(i);
        q.dist = spec.distribution;
        q.area = {std::max(space.xb, center.loc.x - side / 2), std::max(space.yb, center.loc.y - side / 2),
                  std::min(space.xu, center.loc.x + side / 2), std::min(space.yu, center.loc.y + side / 2)};

        if (center.kws.size() >= want_keys) {
            KeywordSet pool = center.kws;
            std::shuffle(pool.begin(), pool.end(), rng);
            pool.resize(want_keys);
            q.keys = std::move(pool);
        } else {
            q.keys = center.kws;
            // Top up uniformly without replacement from the remaining dictionary.
            std::uniform_int_distribution<std::size_t> pick(0, dict_size - 1);
            while (q.keys.size() < want_keys) {
                const auto k = static_cast<KeywordId>(pick(rng));
                if (std::find(q.keys.begin(), q.keys.end(), k) == q.keys.end()) q.keys.push_back(k);
            }
        }
        normalize(q.keys);
        w.queries.push_back(std::move(q));
    }
    return w;
}

std::vector<ObjectId> query_bruteforce(const Dataset& ds, const Query& q) {
    std::vector<ObjectId> out;
    for (const auto& o : ds.objects()) {
        if (q.area.contains(o.loc) && intersects(o.kws, q.keys)) out.push_back(o.id);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Sampling

std::uint64_t default_strata_key(const Query& q) {
    return (static_cast<std::uint64_t>(q.dist) << 32) | static_cast<std::uint64_t>(q.keys.size());
}

Workload stratified_sample(const Workload& w, double ratio, const StrataKey& strata_key, std::uint64_t seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("stratified_sample: ratio must be in (0, 1]");
    std::map<std::uint64_t, std::vector<std::size_t>> strata;
    for (std::size_t i = 0; i < w.queries.size(); ++i) strata[strata_key(w.queries[i])].push_back(i);

    std::mt19937_64 rng(seed);
    std::vector<std::size_t> keep;
    for (auto& [key, members] : strata) {
        auto take = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(members.size())));
        take = std::clamp<std::size_t>(take, 1, members.size());
        if (take < members.size()) {
            std::shuffle(members.begin(), members.end(), rng);
            members.resize(take);
        }
        keep.insert(keep.end(), members.begin(), members.end());
    }
    std::sort(keep.begin(), keep.end());

    Workload out;
    out.queries.reserve(keep.size());
    for (std::size_t i : keep) out.queries.push_back(w.queries[i]);
    return out;
}

// ---------------------------------------------------------------------------
// Workload JSON

std::string workload_to_json(const Workload& w, const Dictionary& dict) {
    json arr = json::array();
    for (const auto& q : w.queries) {
        json keys = json::array();
        for (KeywordId k : q.keys) keys.push_back(dict.word(k));
        arr.push_back({{"id", q.id},
                       {"xb", q.area.xb},
                       {"yb", q.area.yb},
                       {"xu", q.area.xu},
                       {"yu", q.area.yu},
                       {"keys", std::move(keys)},
                       {"dist", to_string(q.dist)}});
    }
    return arr.dump(1);
}

Workload workload_from_json(std::string_view text, const Dictionary& dict) {
    json arr;
    try {
        arr = json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(std::string("workload: invalid JSON: ") + e.what());
    }
    if (!arr.is_array()) throw ParseError("workload: expected a JSON array");
    Workload w;
    for (const auto& rec : arr) {
        try {
            Query q;
            q.id = rec.at("id").get<QueryId>();
            q.area = {rec.at("xb").get<double>(), rec.at("yb").get<double>(), rec.at("xu").get<double>(),
                      rec.at("yu").get<double>()};
            for (const auto& k : rec.at("keys")) {
                const auto word = k.get<std::string>();
                auto id = dict.find(word);
                if (!id) throw ParseError("workload: query " + std::to_string(q.id) + " uses unknown keyword '" + word + "'");
                q.keys.push_back(*id);
            }
            normalize(q.keys);
            if (q.keys.empty()) throw ParseError("workload: query " + std::to_string(q.id) + " has no keywords");
            if (q.area.is_empty()) throw ParseError("workload: query " + std::to_string(q.id) + " has an inverted area");
            if (rec.contains("dist")) q.dist = parse_distribution(rec["dist"].get<std::string>());
            w.queries.push_back(std::move(q));
        } catch (const json::exception& e) {
            throw ParseError(std::string("workload: malformed query: ") + e.what());
        }
    }
    return w;
}

void save_workload(const Workload& w, const Dictionary& dict, const std::filesystem::path& path) {
    write_file(path, workload_to_json(w, dict));
}

Workload load_workload(const std::filesystem::path& path, const Dictionary& dict) {
    return workload_from_json(read_file(path), dict);
}

}  // namespace wisk
