#pragma once

#include "mmdp/environments.hpp"
#include "mmdp/nuisance.hpp"
#include "mmdp/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mmdp {

// Trajectory CSV: traj_id,t,s0..,a,m0..,r,s_next0..
// s_next is stored so the last transition of each trajectory survives the
// round trip. Reals are written with 17 significant digits.

inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::string trajectory_csv_header(const DataShape& shape) {
    std::string h = "traj_id,t";
    for (int j = 0; j < shape.state_dim; ++j) h += ",s" + std::to_string(j);
    h += ",a";
    for (int j = 0; j < shape.mediator_dim; ++j) h += ",m" + std::to_string(j);
    h += ",r";
    for (int j = 0; j < shape.state_dim; ++j) h += ",s_next" + std::to_string(j);
    return h;
}

inline void write_trajectories_csv(std::ostream& os, const std::vector<Trajectory>& trajs, const DataShape& shape) {
    os << trajectory_csv_header(shape) << '\n';
    for (const auto& tr : trajs)
        for (std::size_t t = 0; t < tr.steps.size(); ++t) {
            const auto& o = tr.steps[t];
            if (o.s.size() != shape.state_dim || o.m.size() != shape.mediator_dim || o.s_next.size() != shape.state_dim)
                throw std::invalid_argument("write_trajectories_csv: tuple does not match the data shape");
            os << tr.id << ',' << t;
            for (Eigen::Index j = 0; j < o.s.size(); ++j) os << ',' << format_real(o.s(j));
            os << ',' << o.a;
            for (Eigen::Index j = 0; j < o.m.size(); ++j) os << ',' << format_real(o.m(j));
            os << ',' << format_real(o.r);
            for (Eigen::Index j = 0; j < o.s_next.size(); ++j) os << ',' << format_real(o.s_next(j));
            os << '\n';
        }
}

/// Parse a trajectory CSV. Dimensions are read off the header; rows of one
/// trajectory must be contiguous and in time order.
inline std::vector<Trajectory> read_trajectories_csv(std::istream& is) {
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("trajectory csv: empty input");
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) cols.push_back(c);
    }
    int ds = 0, dm = 0, dn = 0;
    for (const auto& c : cols) {
        if (c.rfind("s_next", 0) == 0)
            ++dn;
        else if (c.size() > 1 && c[0] == 's')
            ++ds;
        else if (c.size() > 1 && c[0] == 'm')
            ++dm;
    }
    const std::size_t expected = static_cast<std::size_t>(4 + ds + dm + dn);
    if (cols.size() < 2 || cols[0] != "traj_id" || cols[1] != "t" || ds < 1 || dm < 1 || dn != ds ||
        cols.size() != expected)
        throw std::runtime_error("trajectory csv: unexpected header '" + line + "'");

    std::vector<Trajectory> out;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) f.push_back(c);
        if (f.size() != expected)
            throw std::runtime_error("trajectory csv: line " + std::to_string(lineno) + " has " +
                                     std::to_string(f.size()) + " fields");
        try {
            std::size_t k = 0;
            const std::int64_t id = std::stoll(f[k++]);
            const long t = std::stol(f[k++]);
            TransitionTuple o;
            o.s.resize(ds);
            for (int j = 0; j < ds; ++j) o.s(j) = std::stod(f[k++]);
            o.a = std::stoi(f[k++]);
            o.m.resize(dm);
            for (int j = 0; j < dm; ++j) o.m(j) = std::stod(f[k++]);
            o.r = std::stod(f[k++]);
            o.s_next.resize(dn);
            for (int j = 0; j < dn; ++j) o.s_next(j) = std::stod(f[k++]);
            if (out.empty() || out.back().id != id) {
                out.emplace_back();
                out.back().id = id;
            }
            if (t != static_cast<long>(out.back().steps.size()))
                throw std::runtime_error("rows out of time order");
            out.back().steps.push_back(std::move(o));
        } catch (const std::logic_error& e) {
            throw std::runtime_error("trajectory csv: line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return out;
}

inline void save_trajectories_csv(const std::string& path, const std::vector<Trajectory>& trajs,
                                  const DataShape& shape) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path);
    write_trajectories_csv(os, trajs, shape);
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline std::vector<Trajectory> load_trajectories_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read " + path);
    return read_trajectories_csv(is);
}

// ---------------------------------------------------------------------------
// Spec descriptor

struct DatasetDescriptor {
    EnvironmentId env;
    std::string spec_name;
    DataShape shape;
    int n_traj = 0;
    int horizon = 0;
    std::uint64_t seed = 0;
    std::string policy = "behavior";
};

inline nlohmann::json to_json(const DatasetDescriptor& d) {
    return {{"env", to_string(d.env.kind)},
            {"sigma", d.env.sigma},
            {"spec", d.spec_name},
            {"state_dim", d.shape.state_dim},
            {"state_kind", to_string(d.shape.state_kind)},
            {"action_count", d.shape.action_count},
            {"mediator_dim", d.shape.mediator_dim},
            {"mediator_kind", to_string(d.shape.mediator_kind)},
            {"n_traj", d.n_traj},
            {"horizon", d.horizon},
            {"seed", d.seed},
            {"policy", d.policy}};
}

inline DatasetDescriptor descriptor_from_json(const nlohmann::json& j) {
    DatasetDescriptor d;
    d.env.kind = environment_kind_from_string(j.at("env").get<std::string>());
    d.env.sigma = j.at("sigma").get<double>();
    d.spec_name = j.value("spec", std::string{});
    d.shape.state_dim = j.at("state_dim").get<int>();
    d.shape.state_kind = space_kind_from_string(j.at("state_kind").get<std::string>());
    d.shape.action_count = j.at("action_count").get<int>();
    d.shape.mediator_dim = j.at("mediator_dim").get<int>();
    d.shape.mediator_kind = space_kind_from_string(j.at("mediator_kind").get<std::string>());
    d.n_traj = j.at("n_traj").get<int>();
    d.horizon = j.at("horizon").get<int>();
    d.seed = j.at("seed").get<std::uint64_t>();
    d.policy = j.value("policy", std::string("behavior"));
    return d;
}

inline DatasetDescriptor describe(const Environment& env, int n_traj, int horizon, std::uint64_t seed) {
    return {env.id, env.spec.name, shape_of(env.spec), n_traj, horizon, seed, env.behavior.name()};
}

}  // namespace mmdp
