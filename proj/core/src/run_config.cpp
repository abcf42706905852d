#include "rifcn/run_config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace rifcn {

namespace {

std::string trim(const std::string& s) {
    const auto begin = s.find_first_not_of(" \t\r");
    if (begin == std::string::npos) {
        return "";
    }
    const auto end = s.find_last_not_of(" \t\r");
    return s.substr(begin, end - begin + 1);
}

int parse_int(const std::string& key, const std::string& val) {
    try {
        std::size_t pos = 0;
        const int v = std::stoi(val, &pos);
        if (pos != val.size()) {
            throw std::invalid_argument(val);
        }
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad integer for " + key + ": '" + val + "'");
    }
}

double parse_double(const std::string& key, const std::string& val) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(val, &pos);
        if (pos != val.size()) {
            throw std::invalid_argument(val);
        }
        return v;
    } catch (const std::exception&) {
        throw ConfigError("config: bad number for " + key + ": '" + val + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& val) {
    if (val == "true" || val == "1") {
        return true;
    }
    if (val == "false" || val == "0") {
        return false;
    }
    throw ConfigError("config: bad boolean for " + key + ": '" + val + "'");
}

std::vector<int> parse_int_list(const std::string& key, const std::string& val) {
    std::vector<int> out;
    std::string token;
    std::istringstream ss(val);
    while (std::getline(ss, token, ',')) {
        out.push_back(parse_int(key, trim(token)));
    }
    if (out.empty()) {
        throw ConfigError("config: empty list for " + key);
    }
    return out;
}

} // namespace

ForwardStreamSpec RunConfig::model_spec() const {
    ForwardStreamSpec spec;
    spec.levels = levels;
    spec.block_widths = widths;
    spec.in_channels = in_channels;
    return width_factor == 1.0 ? spec : spec.scaled(width_factor);
}

TrainConfig RunConfig::train_config() const {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.batch_size = batch_size;
    cfg.val_fraction = val_fraction;
    cfg.patience = patience;
    cfg.seed = seed;
    cfg.optimizer = optimizer == "sgd" ? OptimizerKind::SgdMomentum : OptimizerKind::Nadam;
    cfg.lr = lr;
    cfg.momentum = momentum;
    return cfg;
}

void RunConfig::validate() const {
    if (optimizer != "nadam" && optimizer != "sgd") {
        throw ConfigError("config: optimizer must be 'nadam' or 'sgd', got '" + optimizer + "'");
    }
    model_spec().validate(); // throws ConfigError on bad widths/levels
    if (num_classes < 1) {
        throw ConfigError("config: num_classes must be >= 1");
    }
    const int div = 1 << levels;
    if (patch < div || patch % div != 0) {
        throw ConfigError("config: patch must be a positive multiple of " + std::to_string(div));
    }
    if (patch_stride < 0) {
        throw ConfigError("config: patch_stride must be >= 0");
    }
    if (overlap < 0 || overlap >= patch) {
        throw ConfigError("config: overlap must be in [0, patch)");
    }
    if (lr <= 0) {
        throw ConfigError("config: lr must be positive");
    }
}

RunConfig parse_run_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("config: cannot open " + path.string());
    }
    RunConfig cfg;
    std::set<std::string> seen;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line = line.substr(0, hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config: line " + std::to_string(lineno) + " is not key=value: '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string val = trim(line.substr(eq + 1));
        if (!seen.insert(key).second) {
            throw ConfigError("config: duplicate key '" + key + "'");
        }

        if (key == "levels") {
            cfg.levels = parse_int(key, val);
        } else if (key == "widths") {
            cfg.widths = parse_int_list(key, val);
        } else if (key == "width_factor") {
            cfg.width_factor = parse_double(key, val);
        } else if (key == "in_channels") {
            cfg.in_channels = parse_int(key, val);
        } else if (key == "num_classes") {
            cfg.num_classes = parse_int(key, val);
        } else if (key == "epochs") {
            cfg.epochs = parse_int(key, val);
        } else if (key == "batch_size") {
            cfg.batch_size = parse_int(key, val);
        } else if (key == "val_fraction") {
            cfg.val_fraction = parse_double(key, val);
        } else if (key == "patience") {
            cfg.patience = parse_int(key, val);
        } else if (key == "seed") {
            try {
                std::size_t pos = 0;
                cfg.seed = std::stoull(val, &pos);
                if (pos != val.size()) {
                    throw std::invalid_argument(val);
                }
            } catch (const std::exception&) {
                throw ConfigError("config: bad integer for seed: '" + val + "'");
            }
        } else if (key == "optimizer") {
            cfg.optimizer = val;
        } else if (key == "lr") {
            cfg.lr = parse_double(key, val);
        } else if (key == "momentum") {
            cfg.momentum = parse_double(key, val);
        } else if (key == "augment") {
            cfg.augment = parse_bool(key, val);
        } else if (key == "images_dir") {
            cfg.images_dir = val;
        } else if (key == "labels_dir") {
            cfg.labels_dir = val;
        } else if (key == "patch") {
            cfg.patch = parse_int(key, val);
        } else if (key == "patch_stride") {
            cfg.patch_stride = parse_int(key, val);
        } else if (key == "overlap") {
            cfg.overlap = parse_int(key, val);
        } else if (key == "checkpoint") {
            cfg.checkpoint = val;
        } else if (key == "report") {
            cfg.report = val;
        } else {
            throw ConfigError("config: unknown key '" + key + "' (line " + std::to_string(lineno) + ")");
        }
    }
    return cfg;
}

std::string run_config_schema() {
    return R"(# model
levels = 4                      # pooling stages; widths has levels+1 entries
widths = 64,128,256,512,1024    # channels per block
width_factor = 1.0              # scales every width (desk-scale runs)
in_channels = 3
num_classes = 6                 # 1 selects the sigmoid head
# training
epochs = 30
batch_size = 8
val_fraction = 0.10
patience = 5                    # early-stopping patience in epochs
seed = 0
optimizer = nadam               # nadam | sgd
lr = 2e-4
momentum = 0.9                  # sgd only
augment = true                  # random flips on 3/4 of the patches
# data
images_dir = data/images        # *.ppm | *.pgm | *.ntr
labels_dir = data/labels        # *.ppm, palette-encoded
patch = 64                      # must be a multiple of 2^levels
patch_stride = 0                # 0 = patch (non-overlapping)
overlap = 0                     # prediction window overlap
# outputs
checkpoint = model.ntr
report = train_report.csv
)";
}

} // namespace rifcn
