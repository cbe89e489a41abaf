#include <functional>

#include "mbatch/analysis.hpp"
#include "mbatch/anf.hpp"
#include "mbatch/ir.hpp"

namespace mbatch {
namespace ir {

namespace {

using anf::Body;
using anf::Instr;

// Transitive def-dependency: does `var` depend on `on` within this body?
bool depends_on(const Body& b, const std::string& var, const std::string& on) {
  std::map<std::string, const Instr*> defs;
  for (const auto& in : b.instrs) defs[in.dst] = &in;
  std::set<std::string> seen;
  std::function<bool(const std::string&)> go = [&](const std::string& v) -> bool {
    if (v == on) return true;
    if (!seen.insert(v).second) return false;
    auto it = defs.find(v);
    if (it == defs.end()) return false;
    for (const auto& a : it->second->args)
      if (go(a)) return true;
    return false;
  };
  return go(var);
}

}  // namespace

ValidationReport validate_annotations(const TypedProgram& program) {
  ValidationReport report;
  anf::Module mod = anf::build_module(program);

  for (const auto& [fname, fn] : mod.functions) {
    for (const auto& [gid, sites] : fn.concurrent_groups) {
      ValidationReport::Group g;
      g.group_id = gid;
      g.function = fname;
      g.call_site_ids = sites;
      report.concurrent_groups.push_back(g);

      // Locate the body holding this group's call instructions.
      const Body* holder = nullptr;
      std::vector<const Instr*> calls;
      std::function<void(const Body&)> find = [&](const Body& b) {
        std::vector<const Instr*> here;
        for (const auto& in : b.instrs) {
          if (in.kind == Instr::Kind::kCall && in.concurrent_group &&
              *in.concurrent_group == gid)
            here.push_back(&in);
          for (const auto& arm : in.arms) find(*arm.body);
          if (in.then_body) find(*in.then_body);
          if (in.else_body) find(*in.else_body);
          if (in.map_body) find(*in.map_body);
          if (in.ghost_body) find(*in.ghost_body);
        }
        if (!here.empty()) {
          if (holder && holder != &b) {
            report.ok = false;
            report.errors.push_back("concurrent group " + std::to_string(gid) + " in @" +
                                    fname + " spans multiple scopes");
          }
          holder = &b;
          calls = here;
        }
      };
      find(*fn.body);
      if (!holder || calls.size() < 2) continue;

      // The calls must form a consecutive run so the executor can fork them
      // together.
      std::vector<size_t> idx;
      for (size_t i = 0; i < holder->instrs.size(); ++i)
        for (const Instr* c : calls)
          if (&holder->instrs[i] == c) idx.push_back(i);
      for (size_t k = 1; k < idx.size(); ++k) {
        if (idx[k] != idx[k - 1] + 1) {
          report.ok = false;
          report.errors.push_back("concurrent group " + std::to_string(gid) + " in @" +
                                  fname + ": calls are not adjacent");
        }
      }
      // No data dependence between group members.
      for (size_t a = 0; a < calls.size(); ++a) {
        for (size_t b2 = 0; b2 < calls.size(); ++b2) {
          if (a == b2) continue;
          for (const auto& arg : calls[b2]->args) {
            if (depends_on(*holder, arg, calls[a]->dst)) {
              report.ok = false;
              report.errors.push_back("concurrent group " + std::to_string(gid) + " in @" +
                                      fname + ": calls are data-dependent");
            }
          }
        }
      }
    }
  }

  // Phase boundaries; assign_phases throws on non-contiguous numbering.
  try {
    analysis::PhaseMap pm = analysis::assign_phases(mod, true);
    for (size_t s = 0; s < pm.stage_phase.size(); ++s)
      if (s == 0 || pm.stage_phase[s] != pm.stage_phase[s - 1])
        report.phase_boundaries.push_back({static_cast<int>(s), pm.stage_phase[s]});
  } catch (const Error& e) {
    report.ok = false;
    report.errors.push_back(e.what());
  }
  return report;
}

}  // namespace ir
}  // namespace mbatch
