#pragma once

// Versioned JSON documents for grids and decompositions.  Surpluses and
// coordinates are emitted as plain JSON numbers with shortest round-trip
// formatting (17 significant digits where needed), so save/load is bit-exact.

#include <fstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "ddsg/ddsg_eval.hpp"
#include "ddsg/hdmr.hpp"
#include "ddsg/sparse_grid.hpp"

namespace ddsg {

inline constexpr int kSchemaVersion = 1;

inline std::string to_string(BoundaryMode mode) {
    return mode == BoundaryMode::zero_boundary ? "zero_boundary" : "modified_linear";
}

inline BoundaryMode boundary_mode_from_string(const std::string& s) {
    if (s == "zero_boundary") return BoundaryMode::zero_boundary;
    if (s == "modified_linear") return BoundaryMode::modified_linear;
    throw std::invalid_argument("unknown boundary mode: " + s);
}

inline nlohmann::json to_json(const SparseGridFunction& g) {
    nlohmann::json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["type"] = "sparse_grid";
    doc["dim"] = g.dim();
    doc["out_dim"] = g.out_dim();
    doc["max_level"] = g.max_level();
    doc["eps_gamma"] = g.eps_gamma();
    doc["boundary_mode"] = to_string(g.boundary_mode());
    nlohmann::json nodes = nlohmann::json::array();
    for (const auto& node : g.nodes()) {
        nlohmann::json levels = nlohmann::json::array();
        nlohmann::json indices = nlohmann::json::array();
        for (HeapKey hk : node.key) {
            levels.push_back(level_of(hk));
            indices.push_back(index_of(hk));
        }
        nodes.push_back({{"levels", levels}, {"indices", indices}, {"surplus", node.surplus}});
    }
    doc["nodes"] = std::move(nodes);
    return doc;
}

inline SparseGridFunction sparse_grid_from_json(const nlohmann::json& doc) {
    if (doc.at("schema_version").get<int>() != kSchemaVersion)
        throw std::invalid_argument("sparse grid document: unsupported schema version");
    if (doc.at("type").get<std::string>() != "sparse_grid")
        throw std::invalid_argument("sparse grid document: wrong type tag");
    const int dim = doc.at("dim").get<int>();
    const int out_dim = doc.at("out_dim").get<int>();
    std::vector<GridNode> nodes;
    for (const auto& jn : doc.at("nodes")) {
        GridNode node;
        const auto& levels = jn.at("levels");
        const auto& indices = jn.at("indices");
        if (levels.size() != indices.size())
            throw std::invalid_argument("sparse grid document: levels/indices length mismatch");
        for (std::size_t j = 0; j < levels.size(); ++j)
            node.key.push_back(heap_key(levels[j].get<int>(), indices[j].get<std::uint32_t>()));
        node.surplus = jn.at("surplus").get<std::vector<double>>();
        nodes.push_back(std::move(node));
    }
    return SparseGridFunction::from_nodes(dim, out_dim, doc.at("max_level").get<int>(),
                                          doc.at("eps_gamma").get<double>(),
                                          boundary_mode_from_string(doc.at("boundary_mode")),
                                          std::move(nodes));
}

inline nlohmann::json to_json(const ComponentIndex& u) { return nlohmann::json(u.dims); }

inline ComponentIndex component_index_from_json(const nlohmann::json& j, int d) {
    return ComponentIndex::make(j.get<std::vector<int>>(), d);
}

inline nlohmann::json to_json(const DdsgFunction& f) {
    if (f.exact_cuts())
        throw std::invalid_argument("ddsg document: exact-cut decompositions are not serializable");
    nlohmann::json doc;
    doc["schema_version"] = kSchemaVersion;
    doc["type"] = "ddsg";
    doc["dim"] = f.dim();
    doc["out_dim"] = f.out_dim();
    doc["k_max"] = f.k_max();
    doc["anchor"] = {{"coords", f.anchor().coords}, {"f_anchor", f.anchor().f_anchor}};
    nlohmann::json accepted = nlohmann::json::array();
    for (const auto& [u, grid] : f.accepted())
        accepted.push_back({{"dims", to_json(u)}, {"grid", to_json(grid)}});
    doc["accepted"] = std::move(accepted);
    nlohmann::json rejected = nlohmann::json::array();
    for (const auto& z : f.rejected()) rejected.push_back(to_json(z));
    doc["rejected"] = std::move(rejected);
    nlohmann::json coeff = nlohmann::json::array();
    for (const auto& [u, b] : f.coeff_b()) coeff.push_back({{"dims", to_json(u)}, {"b", b}});
    doc["coeff_b"] = std::move(coeff);
    nlohmann::json quads = nlohmann::json::array();
    for (const auto& [u, b] : f.coeff_b())
        quads.push_back({{"dims", to_json(u)}, {"q", f.cut_quadrature(u)}});
    doc["cut_quadratures"] = std::move(quads);
    return doc;
}

inline DdsgFunction ddsg_from_json(const nlohmann::json& doc) {
    if (doc.at("schema_version").get<int>() != kSchemaVersion)
        throw std::invalid_argument("ddsg document: unsupported schema version");
    if (doc.at("type").get<std::string>() != "ddsg")
        throw std::invalid_argument("ddsg document: wrong type tag");
    const int dim = doc.at("dim").get<int>();
    const int out_dim = doc.at("out_dim").get<int>();
    AnchorPoint anchor;
    anchor.coords = doc.at("anchor").at("coords").get<std::vector<double>>();
    anchor.f_anchor = doc.at("anchor").at("f_anchor").get<std::vector<double>>();
    std::map<ComponentIndex, SparseGridFunction> accepted;
    DdsgOptions opt;
    opt.k_max = doc.at("k_max").get<int>();
    for (const auto& entry : doc.at("accepted")) {
        ComponentIndex u = component_index_from_json(entry.at("dims"), dim);
        SparseGridFunction grid = sparse_grid_from_json(entry.at("grid"));
        opt.max_level = grid.max_level();
        opt.eps_gamma = grid.eps_gamma();
        opt.mode = grid.boundary_mode();
        accepted.emplace(std::move(u), std::move(grid));
    }
    std::set<ComponentIndex> rejected;
    for (const auto& entry : doc.at("rejected"))
        rejected.insert(component_index_from_json(entry, dim));
    std::map<ComponentIndex, int> coeff_b;
    for (const auto& entry : doc.at("coeff_b"))
        coeff_b[component_index_from_json(entry.at("dims"), dim)] = entry.at("b").get<int>();
    std::map<ComponentIndex, std::vector<double>> quads;
    for (const auto& entry : doc.at("cut_quadratures"))
        quads[component_index_from_json(entry.at("dims"), dim)] =
            entry.at("q").get<std::vector<double>>();
    return DdsgFunction::from_parts(dim, out_dim, opt, std::move(anchor), std::move(accepted),
                                    std::move(rejected), std::move(coeff_b), std::move(quads));
}

inline void save_json(const nlohmann::json& doc, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << doc.dump(2) << "\n";
}

inline nlohmann::json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    nlohmann::json doc;
    in >> doc;
    return doc;
}

} // namespace ddsg
