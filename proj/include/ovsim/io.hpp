#pragma once

#include <bit>
#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "ovsim/config.hpp"
#include "ovsim/diagnostics.hpp"
#include "ovsim/errors.hpp"
#include "ovsim/grid.hpp"
#include "ovsim/parameters.hpp"
#include "ovsim/solver.hpp"

namespace ovsim {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Diagnostics CSV
//
// Header: the diagnostics_columns names in order. Doubles use the shortest
// decimal that round-trips (at most 17 significant digits), a_positive is 0
// or 1, clip_events an integer.
// ---------------------------------------------------------------------------

inline std::string diagnostics_header() {
    std::string h;
    for (std::size_t k = 0; k < diagnostics_columns.size(); ++k) {
        if (k) h += ',';
        h += diagnostics_columns[k].name;
    }
    return h;
}

inline void write_diagnostics_row(std::ostream& o, const DiagnosticsRecord& r) {
    for (std::size_t k = 0; k < diagnostics_columns.size(); ++k) {
        if (k) o << ',';
        const auto& col = diagnostics_columns[k];
        if (col.member) {
            o << detail::format_number(r.*col.member);
        } else if (col.name == "a_positive") {
            o << (r.a_positive ? 1 : 0);
        } else {
            o << r.clip_events;
        }
    }
    o << '\n';
}

inline void write_diagnostics(std::span<const DiagnosticsRecord> records, const fs::path& path) {
    std::ofstream o(path, std::ios::binary);
    if (!o) throw IoError("cannot write '" + path.string() + "'");
    o << diagnostics_header() << '\n';
    for (const auto& r : records) write_diagnostics_row(o, r);
    if (!o) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<DiagnosticsRecord> read_diagnostics(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line)) throw IoError("'" + path.string() + "' is empty");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != diagnostics_header()) throw IoError("'" + path.string() + "': header does not match the schema");

    std::vector<DiagnosticsRecord> out;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        DiagnosticsRecord r;
        std::string_view rest = line;
        for (std::size_t k = 0; k < diagnostics_columns.size(); ++k) {
            const std::size_t comma = rest.find(',');
            const std::string_view cell = rest.substr(0, comma);
            const auto& col = diagnostics_columns[k];
            auto bad = [&] {
                return IoError("'" + path.string() + "' line " + std::to_string(lineno) + ": bad value in column " +
                               std::string(col.name));
            };
            if (col.member) {
                double v = 0.0;
                const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
                if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) throw bad();
                r.*col.member = v;
            } else {
                std::int64_t v = 0;
                const auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
                if (res.ec != std::errc{} || res.ptr != cell.data() + cell.size()) throw bad();
                if (col.name == "a_positive") r.a_positive = v != 0;
                else r.clip_events = v;
            }
            if (k + 1 < diagnostics_columns.size()) {
                if (comma == std::string_view::npos) {
                    throw IoError("'" + path.string() + "' line " + std::to_string(lineno) + ": too few columns");
                }
                rest.remove_prefix(comma + 1);
            } else if (comma != std::string_view::npos) {
                throw IoError("'" + path.string() + "' line " + std::to_string(lineno) + ": too many columns");
            }
        }
        out.push_back(r);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Snapshots: <base>.json sidecar plus <base>.<field>.f64 per field (raw
// little-endian float64, row-major with x fastest).
// ---------------------------------------------------------------------------

struct Snapshot {
    State state;
    Grid grid;
    Parameters params;
    std::uint64_t parameter_hash = 0;
};

namespace detail {

inline void write_f64(const fs::path& path, std::span<const double> values) {
    std::vector<unsigned char> bytes(values.size() * 8);
    for (std::size_t k = 0; k < values.size(); ++k) {
        const auto bits = std::bit_cast<std::uint64_t>(values[k]);
        for (int b = 0; b < 8; ++b) bytes[8 * k + b] = static_cast<unsigned char>(bits >> (8 * b));
    }
    std::ofstream o(path, std::ios::binary);
    if (!o) throw IoError("cannot write '" + path.string() + "'");
    o.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!o) throw IoError("write failed for '" + path.string() + "'");
}

inline std::vector<double> read_f64(const fs::path& path, std::size_t count) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path.string() + "'");
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (bytes.size() != count * 8) {
        throw IoError("'" + path.string() + "' holds " + std::to_string(bytes.size()) + " bytes, expected " +
                      std::to_string(count * 8));
    }
    std::vector<double> out(count);
    for (std::size_t k = 0; k < count; ++k) {
        std::uint64_t bits = 0;
        for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[8 * k + b]) << (8 * b);
        out[k] = std::bit_cast<double>(bits);
    }
    return out;
}

inline const nlohmann::json& require_key(const nlohmann::json& j, const char* key, const fs::path& path) {
    if (!j.is_object() || !j.contains(key)) {
        throw IoError("snapshot sidecar '" + path.string() + "' is missing key '" + key + "'");
    }
    return j.at(key);
}

} // namespace detail

inline constexpr std::array<std::string_view, 4> snapshot_field_order{"a", "b", "v", "z"};

/// Writes `base`.json and one `base`.<field>.f64 per field of s.
inline void write_snapshot(const State& s, const Grid& g, const Parameters& p, const fs::path& base) {
    s.validate(g);
    nlohmann::ordered_json j;
    j["t"] = s.t;
    j["nx"] = g.nx;
    j["ny"] = g.ny;
    j["Lx"] = g.Lx;
    j["Ly"] = g.Ly;
    j["parameter_hash"] = p.hash();
    j["field_order"] = snapshot_field_order;
    j["step_count"] = s.step_count;
    j["clip_events"] = s.clip_events;
    j["byte_order"] = "little";
    nlohmann::ordered_json params;
    for (const auto& [name, value] : p.named()) params[std::string(name)] = value;
    j["parameters"] = params;
    nlohmann::ordered_json files;
    const std::string stem = base.filename().string();
    const Field* fields[] = {&s.a, &s.b, &s.v, &s.z};
    for (std::size_t k = 0; k < 4; ++k) {
        const std::string name = stem + "." + std::string(snapshot_field_order[k]) + ".f64";
        detail::write_f64(base.parent_path() / name, fields[k]->values());
        files[std::string(snapshot_field_order[k])] = name;
    }
    j["files"] = files;

    fs::path sidecar = base;
    sidecar += ".json";
    std::ofstream o(sidecar);
    if (!o) throw IoError("cannot write '" + sidecar.string() + "'");
    o << j.dump(2) << '\n';
    if (!o) throw IoError("write failed for '" + sidecar.string() + "'");
}

/// Reads a snapshot from its sidecar path (`base`.json) or from `base`.
inline Snapshot read_snapshot(const fs::path& path) {
    fs::path sidecar = path;
    if (sidecar.extension() != ".json") sidecar += ".json";
    std::ifstream in(sidecar);
    if (!in) throw IoError("cannot open '" + sidecar.string() + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("snapshot sidecar '" + sidecar.string() + "' is not valid JSON: " + e.what());
    }
    using detail::require_key;
    try {
        Snapshot snap;
        snap.grid = Grid{require_key(j, "nx", sidecar).get<int>(), require_key(j, "ny", sidecar).get<int>(),
                         require_key(j, "Lx", sidecar).get<double>(), require_key(j, "Ly", sidecar).get<double>()};
        snap.grid.validate();
        snap.parameter_hash = require_key(j, "parameter_hash", sidecar).get<std::uint64_t>();
        const auto order = require_key(j, "field_order", sidecar).get<std::vector<std::string>>();
        if (order.size() != 4 || !std::equal(order.begin(), order.end(), snapshot_field_order.begin())) {
            throw IoError("snapshot sidecar '" + sidecar.string() + "': unsupported field_order");
        }
        const auto& params = require_key(j, "parameters", sidecar);
        Parameters& p = snap.params;
        for (auto [name, ptr] : {std::pair{"D_u", &p.D_u}, {"D_w", &p.D_w}, {"D_z", &p.D_z}, {"xi_u", &p.xi_u},
                                 {"xi_w", &p.xi_w}, {"mu_u", &p.mu_u}, {"rho", &p.rho}, {"alpha_u", &p.alpha_u},
                                 {"alpha_w", &p.alpha_w}, {"delta_z", &p.delta_z}, {"beta", &p.beta}}) {
            *ptr = require_key(params, name, sidecar).get<double>();
        }
        if (p.hash() != snap.parameter_hash) {
            throw IoError("snapshot sidecar '" + sidecar.string() + "': parameter_hash does not match parameters");
        }
        const auto& files = require_key(j, "files", sidecar);
        State& s = snap.state;
        s.t = require_key(j, "t", sidecar).get<double>();
        s.step_count = require_key(j, "step_count", sidecar).get<std::int64_t>();
        s.clip_events = require_key(j, "clip_events", sidecar).get<std::int64_t>();
        Field* fields[] = {&s.a, &s.b, &s.v, &s.z};
        const Quantity qs[] = {Quantity::a, Quantity::b, Quantity::v, Quantity::z};
        for (std::size_t k = 0; k < 4; ++k) {
            const std::string key(snapshot_field_order[k]);
            const auto file = require_key(files, key.c_str(), sidecar).get<std::string>();
            *fields[k] = Field(snap.grid, qs[k]);
            fields[k]->storage() = detail::read_f64(sidecar.parent_path() / file, snap.grid.size());
        }
        s.validate(snap.grid);
        return snap;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("snapshot sidecar '" + sidecar.string() + "': " + e.what());
    } catch (const DomainError& e) {
        throw IoError("snapshot '" + sidecar.string() + "': " + e.what());
    }
}

// ---------------------------------------------------------------------------
// Rate report
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const RateReport& rep) {
    nlohmann::ordered_json j;
    j["t_lo"] = rep.t_lo;
    j["t_hi"] = rep.t_hi;
    j["tolerance"] = rep.tolerance;
    j["convergence_regime"] = rep.convergence_regime;
    j["gamma_u"] = rep.gamma_u;
    j["gamma_a"] = rep.gamma_a;
    j["eta1_testing"] = rep.eta1_testing;
    j["eta1_final"] = rep.eta1_final;
    j["all_pass"] = rep.all_pass();
    auto entries = nlohmann::ordered_json::array();
    for (const auto& e : rep.entries) {
        nlohmann::ordered_json row;
        row["quantity"] = e.quantity;
        row["bound_name"] = e.bound_name;
        row["bound"] = e.bound;
        if (e.fit) {
            row["rate"] = e.fit->rate;
            row["log_intercept"] = e.fit->log_intercept;
            row["r_squared"] = e.fit->r_squared;
            row["samples"] = e.fit->samples;
        } else {
            row["rate"] = nullptr;
            row["log_intercept"] = nullptr;
            row["r_squared"] = nullptr;
            row["samples"] = 0;
        }
        row["status"] = std::string(to_string(e.status));
        row["note"] = e.note;
        entries.push_back(row);
    }
    j["entries"] = entries;
    j["warnings"] = rep.warnings;
    return j;
}

inline void write_rate_report(const RateReport& rep, const fs::path& path) {
    std::ofstream o(path);
    if (!o) throw IoError("cannot write '" + path.string() + "'");
    o << to_json(rep).dump(2) << '\n';
    if (!o) throw IoError("write failed for '" + path.string() + "'");
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream o(path, std::ios::binary);
    if (!o) throw IoError("cannot write '" + path.string() + "'");
    o << text;
    if (!o) throw IoError("write failed for '" + path.string() + "'");
}

inline void ensure_directory(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
    const fs::path probe = dir / ".write_probe";
    {
        std::ofstream o(probe);
        if (!o) throw IoError("directory '" + dir.string() + "' is not writable");
    }
    fs::remove(probe, ec);
}

} // namespace ovsim
