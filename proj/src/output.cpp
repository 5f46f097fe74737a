#include "mima/output.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

namespace mima {

std::string format_real(double x) {
    if (std::isnan(x)) return "nan";
    if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::general, 17);
    return {buf, res.ptr};
}

namespace {

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + '"';
}

std::string format_cell(const Cell& c) {
    struct Visitor {
        std::string operator()(std::monostate) const { return {}; }
        std::string operator()(std::int64_t v) const { return std::to_string(v); }
        std::string operator()(double v) const { return format_real(v); }
        std::string operator()(const std::string& v) const { return quote(v); }
    };
    return std::visit(Visitor{}, c);
}

}  // namespace

std::string to_csv(const Table& table) {
    std::string out;
    for (std::size_t k = 0; k < table.columns.size(); ++k) {
        if (k) out += ',';
        out += quote(table.columns[k]);
    }
    out += "\r\n";
    for (const auto& row : table.rows) {
        for (std::size_t k = 0; k < row.size(); ++k) {
            if (k) out += ',';
            out += format_cell(row[k]);
        }
        out += "\r\n";
    }
    return out;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw OutputError(path, "cannot open for writing");
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.close();
    if (!out) throw OutputError(path, "write failed");
}

std::vector<std::filesystem::path> write_outputs(const std::filesystem::path& dir, const ExperimentResult& result,
                                                 const ExperimentConfig& config) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec || !std::filesystem::is_directory(dir)) throw OutputError(dir, "cannot create output directory");

    std::vector<std::filesystem::path> written;
    for (const auto& t : result.tables) {
        written.push_back(dir / (t.name + ".csv"));
        write_file(written.back(), to_csv(t));
    }

    nlohmann::json summary = summary_to_json(result.summary);
    summary["experiment"] = config.experiment;
    summary["seed"] = config.seed;
    nlohmann::json runs = nlohmann::json::array();
    for (const auto& r : result.runs) runs.push_back({{"label", r.label}, {"summary", summary_to_json(r.summary)}});
    summary["runs"] = runs;
    summary["metadata"] = result.metadata;
    written.push_back(dir / "summary.json");
    write_file(written.back(), summary.dump(2) + "\n");

    written.push_back(dir / "config.echo.json");
    write_file(written.back(), config_to_json(config).dump(2) + "\n");
    return written;
}

}  // namespace mima
