#include "stiffkin/scheme.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace stiffkin {

namespace {

constexpr int kMaxStoich = 9;

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_ws(std::string_view s) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ' && s[j] != '\t' && s[j] != '\r') ++j;
    if (j > i) out.push_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

bool is_identifier(std::string_view s) {
  if (s.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(s[0])) || s[0] == '_')) return false;
  return std::all_of(s.begin(), s.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
  });
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

bool parse_uint(std::string_view s, std::size_t& out) {
  if (s.empty()) return false;
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, out);
  return ec == std::errc{} && ptr == end;
}

std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

class Parser {
 public:
  explicit Parser(std::string_view text) : text_(text) {}

  ReactionScheme run() {
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text_.size()) {
      auto nl = text_.find('\n', pos);
      if (nl == std::string_view::npos) nl = text_.size();
      ++line_no;
      auto line = text_.substr(pos, nl - pos);
      if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
      line = trim(line);
      if (!line.empty()) handle_line(line, line_no);
      pos = nl + 1;
    }
    for (const auto& [reaction_line, ro2] : ro2_lines_) {
      if (ro2 && scheme_.ro2_pool.empty())
        throw SchemeError("reaction uses @RO2 but no @ro2 pool is declared", reaction_line);
    }
    scheme_.initial_concentrations.resize(scheme_.species.size(), 0.0);
    std::sort(scheme_.ro2_pool.begin(), scheme_.ro2_pool.end());
    scheme_.validate();
    return std::move(scheme_);
  }

 private:
  void handle_line(std::string_view line, std::size_t line_no) {
    if (line.front() == '@') {
      auto tokens = split_ws(line);
      const auto directive = tokens.front();
      tokens.erase(tokens.begin());
      if (directive == "@species") return species_directive(tokens, line_no);
      if (directive == "@ro2") return ro2_directive(tokens, line_no);
      if (directive == "@init") return init_directive(tokens, line_no);
      if (directive == "@tspan") return tspan_directive(tokens, line_no);
      throw SchemeError("unknown directive '" + std::string(directive) + "'", line_no);
    }
    if (line.front() == 'R') return reaction_line(line, line_no);
    throw SchemeError("unrecognised line", line_no);
  }

  std::size_t lookup(std::string_view name, std::size_t line_no) const {
    for (const auto& sp : scheme_.species)
      if (sp.name == name) return sp.index;
    throw SchemeError("unknown species '" + std::string(name) + "'", line_no);
  }

  void species_directive(const std::vector<std::string_view>& names, std::size_t line_no) {
    if (names.empty()) throw SchemeError("@species needs at least one name", line_no);
    for (auto name : names) {
      if (!is_identifier(name)) throw SchemeError("bad species name '" + std::string(name) + "'", line_no);
      for (const auto& sp : scheme_.species)
        if (sp.name == name) throw SchemeError("duplicate species '" + std::string(name) + "'", line_no);
      scheme_.species.push_back({std::string(name), scheme_.species.size()});
    }
  }

  void ro2_directive(const std::vector<std::string_view>& names, std::size_t line_no) {
    if (names.empty()) throw SchemeError("@ro2 needs at least one species", line_no);
    for (auto name : names) {
      const auto idx = lookup(name, line_no);
      if (std::find(scheme_.ro2_pool.begin(), scheme_.ro2_pool.end(), idx) == scheme_.ro2_pool.end())
        scheme_.ro2_pool.push_back(idx);
    }
  }

  void init_directive(const std::vector<std::string_view>& items, std::size_t line_no) {
    scheme_.initial_concentrations.resize(scheme_.species.size(), 0.0);
    for (auto item : items) {
      const auto eq = item.find('=');
      if (eq == std::string_view::npos) throw SchemeError("@init expects NAME=VALUE", line_no);
      const auto idx = lookup(item.substr(0, eq), line_no);
      double value = 0.0;
      if (!parse_double(item.substr(eq + 1), value) || !std::isfinite(value))
        throw SchemeError("bad initial concentration '" + std::string(item) + "'", line_no);
      if (value < 0.0) throw SchemeError("negative initial concentration", line_no);
      scheme_.initial_concentrations[idx] = value;
    }
  }

  void tspan_directive(const std::vector<std::string_view>& args, std::size_t line_no) {
    if (args.size() != 4) throw SchemeError("@tspan expects: log|linear T0 T1 N", line_no);
    TimeGridSpec grid;
    if (args[0] == "log") grid.kind = GridKind::log;
    else if (args[0] == "linear") grid.kind = GridKind::linear;
    else throw SchemeError("@tspan kind must be log or linear", line_no);
    if (!parse_double(args[1], grid.t_start) || !parse_double(args[2], grid.t_end) ||
        !parse_uint(args[3], grid.n_points))
      throw SchemeError("bad @tspan numbers", line_no);
    scheme_.time_grid = grid;
    try {
      scheme_.time_grid.validate_or_throw();
    } catch (const SchemeError& e) {
      throw SchemeError(e.what(), line_no);
    }
  }

  std::map<std::size_t, int> side(std::string_view text, std::size_t line_no) const {
    std::map<std::size_t, int> stoich;
    std::size_t pos = 0;
    while (true) {
      auto plus = text.find('+', pos);
      auto term = trim(text.substr(pos, plus == std::string_view::npos ? std::string_view::npos : plus - pos));
      auto tokens = split_ws(term);
      int count = 1;
      std::string_view name;
      if (tokens.size() == 1) {
        name = tokens[0];
      } else if (tokens.size() == 2) {
        std::size_t c = 0;
        if (!parse_uint(tokens[0], c) || c == 0) throw SchemeError("bad stoichiometric multiplier", line_no);
        count = static_cast<int>(std::min<std::size_t>(c, 1000));
        name = tokens[1];
      } else {
        throw SchemeError("malformed reaction term '" + std::string(term) + "'", line_no);
      }
      stoich[lookup(name, line_no)] += count;
      if (plus == std::string_view::npos) break;
      pos = plus + 1;
    }
    for (const auto& [idx, c] : stoich)
      if (c > kMaxStoich) throw SchemeError("stoichiometric coefficient exceeds 9", line_no);
    return stoich;
  }

  void reaction_line(std::string_view line, std::size_t line_no) {
    const auto colon = line.find(':');
    if (colon == std::string_view::npos) throw SchemeError("reaction line needs 'Rk:' label", line_no);
    std::size_t id = 0;
    if (!parse_uint(trim(line.substr(1, colon - 1)), id))
      throw SchemeError("bad reaction label", line_no);
    if (id != scheme_.reactions.size() + 1)
      throw SchemeError("reaction label R" + std::to_string(id) + " out of sequence", line_no);

    const auto body = line.substr(colon + 1);
    const auto coeff_sep = body.rfind(':');
    const auto eq = body.find('=');
    if (coeff_sep == std::string_view::npos || eq == std::string_view::npos || eq > coeff_sep)
      throw SchemeError("reaction must read 'LHS = RHS : COEFF'", line_no);

    Reaction r;
    r.id = id;
    r.forward_stoich = side(trim(body.substr(0, eq)), line_no);
    r.reverse_stoich = side(trim(body.substr(eq + 1, coeff_sep - eq - 1)), line_no);

    auto tail = split_ws(body.substr(coeff_sep + 1));
    if (tail.empty()) throw SchemeError("missing rate coefficient", line_no);
    if (!parse_double(tail[0], r.rate_coefficient) || !std::isfinite(r.rate_coefficient))
      throw SchemeError("bad rate coefficient '" + std::string(tail[0]) + "'", line_no);
    if (r.rate_coefficient <= 0.0) throw SchemeError("rate coefficient must be positive", line_no);
    for (std::size_t i = 1; i < tail.size(); ++i) {
      if (tail[i] == "@RO2") r.ro2_scaled = true;
      else if (tail[i] == "!fixed") r.frozen = true;
      else throw SchemeError("unknown reaction flag '" + std::string(tail[i]) + "'", line_no);
    }
    ro2_lines_.emplace_back(line_no, r.ro2_scaled);
    scheme_.reactions.push_back(std::move(r));
  }

  std::string_view text_;
  ReactionScheme scheme_;
  std::vector<std::pair<std::size_t, bool>> ro2_lines_;
};

}  // namespace

SchemeError::SchemeError(const std::string& what, std::size_t line)
    : std::runtime_error(line ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}

void TimeGridSpec::validate_or_throw() const {
  if (n_points < 2) throw SchemeError("time grid needs at least 2 points");
  if (!(t_start < t_end)) throw SchemeError("time grid requires t_start < t_end");
  if (kind == GridKind::log && !(t_start > 0.0)) throw SchemeError("log time grid requires t_start > 0");
}

std::vector<double> TimeGridSpec::times() const {
  std::vector<double> t(n_points);
  const double last = static_cast<double>(n_points - 1);
  if (kind == GridKind::linear) {
    for (std::size_t i = 0; i < n_points; ++i) t[i] = t_start + (t_end - t_start) * (static_cast<double>(i) / last);
  } else {
    const double a = std::log10(t_start), b = std::log10(t_end);
    for (std::size_t i = 0; i < n_points; ++i) t[i] = std::pow(10.0, a + (b - a) * (static_cast<double>(i) / last));
  }
  t.front() = t_start;
  t.back() = t_end;
  return t;
}

std::size_t ReactionScheme::species_index(std::string_view name) const {
  for (const auto& sp : species)
    if (sp.name == name) return sp.index;
  throw SchemeError("unknown species '" + std::string(name) + "'");
}

std::vector<std::string> ReactionScheme::species_names() const {
  std::vector<std::string> names;
  names.reserve(species.size());
  for (const auto& sp : species) names.push_back(sp.name);
  return names;
}

Eigen::VectorXd ReactionScheme::true_coefficients() const {
  Eigen::VectorXd k(reactions.size());
  for (std::size_t i = 0; i < reactions.size(); ++i) k[i] = reactions[i].rate_coefficient;
  return k;
}

std::vector<bool> ReactionScheme::frozen_mask() const {
  std::vector<bool> mask(reactions.size());
  for (std::size_t i = 0; i < reactions.size(); ++i) mask[i] = reactions[i].frozen;
  return mask;
}

std::size_t ReactionScheme::n_trainable() const {
  return static_cast<std::size_t>(
      std::count_if(reactions.begin(), reactions.end(), [](const Reaction& r) { return !r.frozen; }));
}

void ReactionScheme::validate() const {
  std::set<std::string> names;
  for (std::size_t i = 0; i < species.size(); ++i) {
    if (species[i].index != i) throw SchemeError("species indices must be contiguous from 0");
    if (!names.insert(species[i].name).second) throw SchemeError("duplicate species '" + species[i].name + "'");
  }
  const auto n = species.size();
  if (initial_concentrations.size() != n) throw SchemeError("initial concentrations must cover every species");
  for (double c : initial_concentrations)
    if (!(c >= 0.0) || !std::isfinite(c)) throw SchemeError("initial concentrations must be finite and >= 0");
  for (auto p : ro2_pool)
    if (p >= n) throw SchemeError("RO2 pool references unknown species");
  time_grid.validate_or_throw();
  for (const auto& r : reactions) {
    const auto where = "reaction R" + std::to_string(r.id) + ": ";
    bool has_reactant = false;
    for (const auto& [idx, c] : r.forward_stoich) {
      if (idx >= n) throw SchemeError(where + "unknown species index");
      if (c < 0 || c > kMaxStoich) throw SchemeError(where + "stoichiometry out of range");
      has_reactant = has_reactant || c >= 1;
    }
    for (const auto& [idx, c] : r.reverse_stoich) {
      if (idx >= n) throw SchemeError(where + "unknown species index");
      if (c < 0 || c > kMaxStoich) throw SchemeError(where + "stoichiometry out of range");
    }
    if (!has_reactant) throw SchemeError(where + "needs at least one reactant");
    if (!(r.rate_coefficient > 0.0) || !std::isfinite(r.rate_coefficient))
      throw SchemeError(where + "rate coefficient must be positive");
    if (r.ro2_scaled && ro2_pool.empty()) throw SchemeError(where + "@RO2 without a declared RO2 pool");
  }
}

ReactionScheme parse_scheme(std::string_view text) { return Parser(text).run(); }

ReactionScheme load_scheme(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemeError("cannot open mechanism file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_scheme(ss.str());
}

std::string serialize_scheme(const ReactionScheme& scheme) {
  std::ostringstream out;
  const auto write_names = [&](const char* directive, const auto& indices) {
    constexpr std::size_t per_line = 8;
    for (std::size_t i = 0; i < indices.size(); i += per_line) {
      out << directive;
      for (std::size_t j = i; j < std::min(indices.size(), i + per_line); ++j)
        out << ' ' << scheme.species[indices[j]].name;
      out << '\n';
    }
  };
  std::vector<std::size_t> all(scheme.n_species());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  write_names("@species", all);
  if (!scheme.ro2_pool.empty()) write_names("@ro2", scheme.ro2_pool);

  bool any_init = false;
  for (std::size_t i = 0; i < scheme.n_species(); ++i) {
    if (scheme.initial_concentrations[i] == 0.0) continue;
    out << (any_init ? " " : "@init ") << scheme.species[i].name << '=' << format_double(scheme.initial_concentrations[i]);
    any_init = true;
  }
  if (any_init) out << '\n';

  const auto& g = scheme.time_grid;
  out << "@tspan " << (g.kind == GridKind::log ? "log" : "linear") << ' ' << format_double(g.t_start) << ' '
      << format_double(g.t_end) << ' ' << g.n_points << "\n\n";

  const auto write_side = [&](const std::map<std::size_t, int>& side) {
    bool first = true;
    for (const auto& [idx, c] : side) {
      if (c == 0) continue;
      if (!first) out << " + ";
      if (c > 1) out << c << ' ';
      out << scheme.species[idx].name;
      first = false;
    }
  };
  for (const auto& r : scheme.reactions) {
    out << 'R' << r.id << ": ";
    write_side(r.forward_stoich);
    out << " = ";
    write_side(r.reverse_stoich);
    out << " : " << format_double(r.rate_coefficient);
    if (r.ro2_scaled) out << " @RO2";
    if (r.frozen) out << " !fixed";
    out << '\n';
  }
  return out.str();
}

Eigen::MatrixXi net_stoichiometry(const ReactionScheme& scheme) {
  Eigen::MatrixXi s = Eigen::MatrixXi::Zero(static_cast<Eigen::Index>(scheme.n_species()),
                                            static_cast<Eigen::Index>(scheme.n_reactions()));
  for (std::size_t i = 0; i < scheme.n_reactions(); ++i) {
    const auto col = static_cast<Eigen::Index>(i);
    for (const auto& [j, c] : scheme.reactions[i].forward_stoich) s(static_cast<Eigen::Index>(j), col) -= c;
    for (const auto& [j, c] : scheme.reactions[i].reverse_stoich) s(static_cast<Eigen::Index>(j), col) += c;
  }
  return s;
}

Eigen::MatrixXd forward_stoichiometry(const ReactionScheme& scheme) {
  Eigen::MatrixXd f = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(scheme.n_reactions()),
                                            static_cast<Eigen::Index>(scheme.n_species()));
  for (std::size_t i = 0; i < scheme.n_reactions(); ++i)
    for (const auto& [j, c] : scheme.reactions[i].forward_stoich)
      f(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = c;
  return f;
}

}  // namespace stiffkin
