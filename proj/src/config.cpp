#include "cumamba/config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <vector>

namespace cumamba {

std::string degradation_kind_name(DegradationKind kind) {
    return kind == DegradationKind::kMotionBlur ? "blur" : "gaussian";
}

DegradationKind parse_degradation_kind(const std::string& name) {
    if (name == "gaussian") return DegradationKind::kGaussianNoise;
    if (name == "blur") return DegradationKind::kMotionBlur;
    throw std::invalid_argument("unknown degradation '" + name + "' (expected gaussian or blur)");
}

void Degradation::validate() const {
    if (kind == DegradationKind::kGaussianNoise) {
        const bool in_range = sigma >= 5.0 / 255.0 - 1e-12 && sigma <= 50.0 / 255.0 + 1e-12;
        if (!(sigma == 0.0 || in_range)) {
            throw std::invalid_argument("noise sigma " + std::to_string(sigma) +
                                        " outside {0} and [5/255, 50/255]");
        }
        return;
    }
    if (!(blur_length == 1 || (blur_length >= 3 && blur_length <= 15))) {
        throw std::invalid_argument("blur length " + std::to_string(blur_length) + " outside {1} and [3, 15]");
    }
    if (blur_kernel > 3) {
        throw std::invalid_argument("blur kernel id " + std::to_string(blur_kernel) + " outside 0..3");
    }
}

void TrainConfig::validate() const {
    const auto fail = [](const std::string& msg) { throw std::invalid_argument(msg); };
    if (batch == 0) fail("batch must be positive");
    if (!(lr_start > 0.0) || !(lr_end >= 0.0)) fail("learning rates must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) fail("betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) fail("adam_eps must be positive");
    if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
    if (!(clip_norm >= 0.0)) fail("clip_norm must be non-negative");
    if (train_images == 0) fail("train_images must be positive");
    if (log_every == 0) fail("log_every must be positive");
    degradation.validate();
}

void RunConfig::validate() const {
    model.validate();
    loss.validate();
    train.validate();
}

namespace {

struct Field {
    const char* key;
    std::function<std::string(const RunConfig&)> get;
    std::function<void(RunConfig&, const std::string&)> set;
};

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_double(const std::string& s) {
    double v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw std::invalid_argument("expected a number");
    return v;
}

std::uint64_t parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size()) {
        throw std::invalid_argument("expected a non-negative integer");
    }
    return v;
}

bool parse_bool(const std::string& s) {
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw std::invalid_argument("expected true or false");
}

std::string fmt_list(const std::vector<std::size_t>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::vector<std::size_t> parse_list(const std::string& s) {
    std::vector<std::size_t> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_u64(item));
    if (out.empty()) throw std::invalid_argument("expected a comma-separated list");
    return out;
}

#define SIZE_FIELD(key, member)                                               \
    Field {                                                                   \
        key, [](const RunConfig& c) { return std::to_string(c.member); },     \
            [](RunConfig& c, const std::string& v) { c.member = parse_u64(v); } \
    }
#define DOUBLE_FIELD(key, member)                                              \
    Field {                                                                    \
        key, [](const RunConfig& c) { return fmt_double(c.member); },          \
            [](RunConfig& c, const std::string& v) { c.member = parse_double(v); } \
    }
#define BOOL_FIELD(key, member)                                                          \
    Field {                                                                              \
        key, [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }, \
            [](RunConfig& c, const std::string& v) { c.member = parse_bool(v); }          \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        SIZE_FIELD("levels", model.levels),
        Field{"blocks_per_level", [](const RunConfig& c) { return fmt_list(c.model.blocks_per_level); },
              [](RunConfig& c, const std::string& v) { c.model.blocks_per_level = parse_list(v); }},
        SIZE_FIELD("base_width", model.base_width),
        SIZE_FIELD("state_size", model.state_size),
        SIZE_FIELD("expansion", model.expansion),
        SIZE_FIELD("conv_width", model.conv_width),
        SIZE_FIELD("patch_h", model.patch_h),
        SIZE_FIELD("patch_w", model.patch_w),
        Field{"kind", [](const RunConfig& c) { return block_kind_name(c.model.kind); },
              [](RunConfig& c, const std::string& v) { c.model.kind = parse_block_kind(v); }},
        SIZE_FIELD("scan_chunk", model.scan_chunk),
        BOOL_FIELD("parallel_scan", model.parallel_scan),
        DOUBLE_FIELD("loss_epsilon", loss.epsilon),
        DOUBLE_FIELD("loss_lambda", loss.lambda),
        SIZE_FIELD("steps", train.steps),
        SIZE_FIELD("batch", train.batch),
        DOUBLE_FIELD("lr_start", train.lr_start),
        DOUBLE_FIELD("lr_end", train.lr_end),
        DOUBLE_FIELD("beta1", train.beta1),
        DOUBLE_FIELD("beta2", train.beta2),
        DOUBLE_FIELD("adam_eps", train.adam_eps),
        DOUBLE_FIELD("weight_decay", train.weight_decay),
        DOUBLE_FIELD("clip_norm", train.clip_norm),
        BOOL_FIELD("augment", train.augment),
        SIZE_FIELD("train_images", train.train_images),
        SIZE_FIELD("test_images", train.test_images),
        SIZE_FIELD("log_every", train.log_every),
        SIZE_FIELD("checkpoint_every", train.checkpoint_every),
        Field{"degradation", [](const RunConfig& c) { return degradation_kind_name(c.train.degradation.kind); },
              [](RunConfig& c, const std::string& v) { c.train.degradation.kind = parse_degradation_kind(v); }},
        DOUBLE_FIELD("noise_sigma", train.degradation.sigma),
        SIZE_FIELD("blur_length", train.degradation.blur_length),
        SIZE_FIELD("blur_kernel", train.degradation.blur_kernel),
        SIZE_FIELD("seed", seed),
    };
    return table;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig parse_config(const std::string& text, const RunConfig& base) {
    RunConfig c = base;
    std::stringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        const std::string where = "line " + std::to_string(lineno) + ": ";
        if (eq == std::string::npos) throw ConfigError(where + "expected key = value, got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const Field* field = nullptr;
        for (const auto& f : fields())
            if (key == f.key) field = &f;
        if (!field) throw ConfigError(where + "unknown key '" + key + "'");
        try {
            field->set(c, value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(where + key + " = '" + value + "': " + e.what());
        }
    }
    return c;
}

RunConfig load_config(const std::string& path, const RunConfig& base) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config(ss.str(), base);
    } catch (const ConfigError& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

std::string to_text(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
    return out;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_text(a) == to_text(b); }

}  // namespace cumamba
