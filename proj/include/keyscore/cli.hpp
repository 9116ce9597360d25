#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace keyscore::cli {

struct AblationSpec {
    std::string name;
    /// "builtin", "embed", "adapted_embed" or an explicit base URL.
    std::string provider = "builtin";
    bool augmented_bank = true;
};

/// Pipeline configuration. Relative paths are resolved against the config
/// file's directory; command-line flags override file values.
struct RunConfig {
    std::filesystem::path corpus;
    std::vector<std::string> question_ids;
    std::filesystem::path questions;
    std::uint64_t seed = 7;
    double ratio_train = 0.8, ratio_dev = 0.1, ratio_test = 0.1;
    std::size_t augmentation_size = 16;
    std::filesystem::path annotations;
    std::filesystem::path decisions;
    std::filesystem::path fixtures;
    bool record = false;
    std::optional<std::string> completion_url;
    std::string completion_path = "/complete";
    std::string model_id = "text-davinci-003";
    int max_tokens = 256;
    std::optional<std::string> embed_url;
    std::optional<std::string> adapted_embed_url;
    std::optional<std::string> score_url;
    double analytic_threshold = 0.5;
    double silver_threshold = 0.5;
    bool dedup_by_reference = false;
    std::size_t max_in_flight = 4;
    std::filesystem::path output_dir = "out";
    std::vector<AblationSpec> ablation;

    /// Throws ValidationError when a threshold lies outside (0, 1) or ratios are invalid.
    void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_config(const std::filesystem::path& path);

/// Runs one CLI invocation (`args[0]` is the program name). Errors are printed
/// to `err` as a single `error: <kind>: <message>` line.
int run(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err);

}  // namespace keyscore::cli
