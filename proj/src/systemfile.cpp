#include "flatforge/systemfile.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <sstream>

namespace flatforge {

namespace {

struct Line {
    int number;
    std::string text;
};

struct Sections {
    // section name -> lines in file order
    std::vector<std::pair<std::string, std::vector<Line>>> ordered;

    const std::vector<Line>* find(const std::string& name) const {
        for (const auto& [n, lines] : ordered) {
            if (n == name) return &lines;
        }
        return nullptr;
    }
};

[[noreturn]] void fail_line(int line, const std::string& origin, const std::string& msg) {
    throw ParseError(static_cast<std::size_t>(line), origin + ":" + std::to_string(line) + ": " + msg);
}

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

Sections split_sections(const std::string& text, const std::string& origin) {
    Sections out;
    std::istringstream is(text);
    std::string raw;
    int lineno = 0;
    std::vector<Line>* current = nullptr;
    while (std::getline(is, raw)) {
        ++lineno;
        if (auto hash = raw.find('#'); hash != std::string::npos) raw.erase(hash);
        std::string line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']') fail_line(lineno, origin, "unterminated section header");
            std::string name = trim(line.substr(1, line.size() - 2));
            out.ordered.emplace_back(name, std::vector<Line>{});
            current = &out.ordered.back().second;
            continue;
        }
        if (!current) fail_line(lineno, origin, "content before the first section header");
        current->push_back({lineno, line});
    }
    return out;
}

std::pair<std::string, std::string> split_assignment(const Line& l, const std::string& origin) {
    std::size_t eq = l.text.find('=');
    if (eq == std::string::npos) fail_line(l.number, origin, "expected '<name> = <value>'");
    return {trim(l.text.substr(0, eq)), trim(l.text.substr(eq + 1))};
}

Expr parse_expr_at(const std::string& text, int line, const std::string& origin) {
    try {
        return parse_expr(text);
    } catch (const ParseError& err) {
        fail_line(line, origin, err.what());
    }
}

double parse_number_at(const std::string& text, int line, const std::string& origin) {
    Expr e = parse_expr_at(text, line, origin);
    if (!e.is_constant()) fail_line(line, origin, "expected a numeric constant: '" + text + "'");
    return e.constant_value().to_double();
}

MultiIndex parse_multiindex_at(const std::string& text, int line, const std::string& origin) {
    std::string t = trim(text);
    if (t.size() < 5 || t.front() != '(' || t.back() != ')') {
        fail_line(line, origin, "expected '(a, b)': '" + text + "'");
    }
    std::string inner = t.substr(1, t.size() - 2);
    std::size_t comma = inner.find(',');
    if (comma == std::string::npos) fail_line(line, origin, "expected '(a, b)': '" + text + "'");
    try {
        return MultiIndex{std::stoi(trim(inner.substr(0, comma))),
                          std::stoi(trim(inner.substr(comma + 1)))};
    } catch (const std::exception&) {
        fail_line(line, origin, "expected integers in '" + text + "'");
    }
}

std::vector<std::string> split_ws(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string tok;
    while (is >> tok) out.push_back(tok);
    return out;
}

// Highest reference-jet order per channel in the given expressions.
MultiIndex max_ref_orders(std::span<const Expr> exprs) {
    MultiIndex m{0, 0};
    std::vector<VarId> vars;
    for (const auto& e : exprs) collect_free_variables(e, vars);
    for (const auto& v : vars) {
        if (v.kind != VarKind::RefJet) continue;
        int& slot = v.index == 1 ? m.a1 : m.a2;
        slot = std::max(slot, v.order);
    }
    return m;
}

LoadedSystem build_system(const Sections& sec, const std::string& origin, std::mt19937_64& rng) {
    LoadedSystem ls;
    ControlSystem& sys = ls.sys;
    FlatSpec& spec = ls.spec;

    const auto* states = sec.find("states");
    if (!states || states->empty()) throw ValidationError(origin + ": missing [states]");
    for (const auto& l : *states) {
        for (const auto& name : split_ws(l.text)) sys.state_names.push_back(name);
    }
    sys.n = static_cast<int>(sys.state_names.size());

    const auto* inputs = sec.find("inputs");
    if (!inputs) throw ValidationError(origin + ": missing [inputs]");
    std::vector<std::string> input_names;
    for (const auto& l : *inputs) {
        for (const auto& name : split_ws(l.text)) input_names.push_back(name);
    }
    if (input_names.size() != 2) {
        throw ValidationError(origin + ": exactly 2 inputs required, got " +
                              std::to_string(input_names.size()));
    }
    sys.input_names = {input_names[0], input_names[1]};

    if (const auto* params = sec.find("params")) {
        for (const auto& l : *params) {
            auto [name, value] = split_assignment(l, origin);
            sys.params[name] = parse_number_at(value, l.number, origin);
        }
    }

    const auto* dyn = sec.find("dynamics");
    if (!dyn) throw ValidationError(origin + ": missing [dynamics]");
    sys.f.assign(sys.n, Expr());
    std::vector<bool> seen(sys.n, false);
    for (const auto& l : *dyn) {
        auto [key, value] = split_assignment(l, origin);
        if (key.size() < 3 || key.front() != 'x' || key.back() != '\'') {
            fail_line(l.number, origin, "dynamics lines look like \"x<i>' = <expr>\"");
        }
        int i = 0;
        try {
            i = std::stoi(key.substr(1, key.size() - 2));
        } catch (const std::exception&) {
            fail_line(l.number, origin, "bad state index in '" + key + "'");
        }
        if (i < 1 || i > sys.n) fail_line(l.number, origin, "state index out of range in '" + key + "'");
        if (seen[i - 1]) fail_line(l.number, origin, "duplicate dynamics for x" + std::to_string(i));
        seen[i - 1] = true;
        sys.f[i - 1] = parse_expr_at(value, l.number, origin);
    }
    for (int i = 0; i < sys.n; ++i) {
        if (!seen[i]) {
            throw ValidationError(origin + ": missing dynamics for x" + std::to_string(i + 1));
        }
    }

    const auto* flat = sec.find("flat_output");
    if (!flat) throw ValidationError(origin + ": missing [flat_output]");
    bool got1 = false, got2 = false;
    for (const auto& l : *flat) {
        auto [key, value] = split_assignment(l, origin);
        if (key == "y1") {
            spec.phi[0] = parse_expr_at(value, l.number, origin);
            got1 = true;
        } else if (key == "y2") {
            spec.phi[1] = parse_expr_at(value, l.number, origin);
            got2 = true;
        } else if (key == "R") {
            spec.declared_R = parse_multiindex_at(value, l.number, origin);
        } else {
            fail_line(l.number, origin, "[flat_output] keys are y1, y2, R");
        }
    }
    if (!got1 || !got2) throw ValidationError(origin + ": flat output must define y1 and y2");

    if (const auto* par = sec.find("parameterization")) {
        std::vector<Expr> fx(sys.n);
        std::array<Expr, 2> fu;
        std::vector<bool> seen_x(sys.n, false);
        std::array<bool, 2> seen_u{false, false};
        for (const auto& l : *par) {
            auto [key, value] = split_assignment(l, origin);
            Expr e = parse_expr_at(value, l.number, origin);
            if (key.size() >= 2 && key[0] == 'x') {
                int i = std::stoi(key.substr(1));
                if (i < 1 || i > sys.n) fail_line(l.number, origin, "unknown state '" + key + "'");
                fx[i - 1] = e;
                seen_x[i - 1] = true;
            } else if (key.size() == 2 && key[0] == 'u' && (key[1] == '1' || key[1] == '2')) {
                fu[key[1] - '1'] = e;
                seen_u[key[1] - '1'] = true;
            } else {
                fail_line(l.number, origin, "[parameterization] keys are x<i> and u<j>");
            }
        }
        if (!std::all_of(seen_x.begin(), seen_x.end(), [](bool b) { return b; }) || !seen_u[0] ||
            !seen_u[1]) {
            throw ValidationError(origin +
                                  ": parameterization must define every state and both inputs");
        }
        spec.f_x = std::move(fx);
        spec.f_u = fu;
        if (!spec.declared_R) {
            std::vector<Expr> both = {fu[0], fu[1]};
            spec.declared_R = max_ref_orders(both);
        }
    }

    if (const auto* dom = sec.find("domain")) {
        for (const auto& l : *dom) {
            std::size_t in_pos = l.text.find(" in ");
            if (in_pos == std::string::npos) {
                fail_line(l.number, origin, "domain lines look like '<var> in [a, b]'");
            }
            std::string name = trim(l.text.substr(0, in_pos));
            std::string range = trim(l.text.substr(in_pos + 4));
            if (range.size() < 5 || range.front() != '[' || range.back() != ']') {
                fail_line(l.number, origin, "expected '[a, b]'");
            }
            std::string inner = range.substr(1, range.size() - 2);
            std::size_t comma = inner.find(',');
            if (comma == std::string::npos) fail_line(l.number, origin, "expected '[a, b]'");
            double lo = parse_number_at(trim(inner.substr(0, comma)), l.number, origin);
            double hi = parse_number_at(trim(inner.substr(comma + 1)), l.number, origin);
            if (name == "default") {
                sys.dom.set_default(lo, hi);
            } else {
                Expr v = parse_expr_at(name, l.number, origin);
                if (!v.is_variable()) fail_line(l.number, origin, "'" + name + "' is not a variable");
                sys.dom.set(v.variable(), lo, hi);
            }
        }
    }

    for (const auto& [name, value] : sys.params) {
        sys.dom.bind(VarId::parameter(name), value);
    }

    validate_system(sys, rng);
    validate_spec(sys, spec, rng);
    return ls;
}

}  // namespace

LoadedSystem parse_system_text(const std::string& text, const std::string& origin,
                               std::mt19937_64& rng) {
    Sections sec = split_sections(text, origin);
    return build_system(sec, origin, rng);
}

LoadedSystem load_system(const std::filesystem::path& path, std::mt19937_64& rng) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_system_text(ss.str(), path.filename().string(), rng);
}

LoadedSystem load_system(const std::filesystem::path& path) {
    std::mt19937_64 rng(0x5eedULL);
    return load_system(path, rng);
}

namespace {

void write_system_sections(const LoadedSystem& ls, std::ostream& os) {
    const ControlSystem& sys = ls.sys;
    if (!sys.params.empty()) {
        os << "[params]\n";
        for (const auto& [name, value] : sys.params) {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "%.17g", value);
            os << name << " = " << buf << "\n";
        }
        os << "\n";
    }
    os << "[states]\n";
    for (std::size_t i = 0; i < sys.state_names.size(); ++i) {
        os << (i ? " " : "") << sys.state_names[i];
    }
    os << "\n\n[inputs]\n" << sys.input_names[0] << " " << sys.input_names[1] << "\n\n";
    os << "[dynamics]\n";
    for (int i = 0; i < sys.n; ++i) {
        os << "x" << (i + 1) << "' = " << to_string(sys.f[i]) << "\n";
    }
    os << "\n[flat_output]\n";
    os << "y1 = " << to_string(ls.spec.phi[0]) << "\n";
    os << "y2 = " << to_string(ls.spec.phi[1]) << "\n";
    if (ls.spec.declared_R) os << "R = " << ls.spec.declared_R->str() << "\n";
    if (ls.spec.f_x) {
        os << "\n[parameterization]\n";
        for (int i = 0; i < sys.n; ++i) {
            os << "x" << (i + 1) << " = " << to_string((*ls.spec.f_x)[i]) << "\n";
        }
        for (int j = 0; j < 2; ++j) {
            os << "u" << (j + 1) << " = " << to_string((*ls.spec.f_u)[j]) << "\n";
        }
    }
    os << "\n[domain]\n";
    char buf[32];
    for (const auto& [v, range] : sys.dom.intervals()) {
        os << v.name() << " in [";
        std::snprintf(buf, sizeof(buf), "%.17g", range.first);
        os << buf << ", ";
        std::snprintf(buf, sizeof(buf), "%.17g", range.second);
        os << buf << "]\n";
    }
    auto [dlo, dhi] = sys.dom.default_interval();
    os << "default in [";
    std::snprintf(buf, sizeof(buf), "%.17g", dlo);
    os << buf << ", ";
    std::snprintf(buf, sizeof(buf), "%.17g", dhi);
    os << buf << "]\n";
}

std::string join_doubles(std::span<const double> v) {
    std::ostringstream os;
    char buf[32];
    for (std::size_t i = 0; i < v.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%.17g", v[i]);
        os << (i ? "," : "") << buf;
    }
    return os.str();
}

}  // namespace

void save_system(const LoadedSystem& ls, std::ostream& os) { write_system_sections(ls, os); }

std::string system_to_string(const LoadedSystem& ls) {
    std::ostringstream os;
    save_system(ls, os);
    return os.str();
}

void save_controller(const ControllerFile& cf, std::ostream& os) {
    write_system_sections(cf.model, os);
    const Controller& c = cf.ctrl;
    os << "\n[controller]\n";
    os << "kappa = " << c.kappa.str() << "\n";
    os << "R = " << c.R.str() << "\n";
    os << "lead = " << c.lead << "\n";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", c.guard);
    os << "guard = " << buf << "\n";
    os << "\n[gains]\n";
    os << "a1 = " << join_doubles(c.gains.a[0]) << "\n";
    os << "a2 = " << join_doubles(c.gains.a[1]) << "\n";
    os << "\n[v_form]\n";
    for (int j = 1; j <= 2; ++j) {
        for (std::size_t beta = 0; beta < c.bstate.v_form[j - 1].size(); ++beta) {
            os << "y" << j << "_" << beta << " = " << to_string(c.bstate.v_form[j - 1][beta])
               << "\n";
        }
    }
    os << "\n[v_chain]\n";
    for (const auto& entry : c.chain) {
        os << entry.v.name() << " = " << to_string(entry.rhs) << "\n";
    }
    os << "\n[law]\n";
    os << "u1 = " << to_string(c.law[0]) << "\n";
    os << "u2 = " << to_string(c.law[1]) << "\n";
}

ControllerFile load_controller(const std::filesystem::path& path, std::mt19937_64& rng) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    const std::string origin = path.filename().string();
    Sections sec = split_sections(ss.str(), origin);

    ControllerFile cf;
    cf.model = build_system(sec, origin, rng);
    Controller& c = cf.ctrl;
    c.params = cf.model.sys.params;

    const auto* meta = sec.find("controller");
    if (!meta) throw ValidationError(origin + ": missing [controller]");
    for (const auto& l : *meta) {
        auto [key, value] = split_assignment(l, origin);
        if (key == "kappa") {
            c.kappa = parse_multiindex_at(value, l.number, origin);
        } else if (key == "R") {
            c.R = parse_multiindex_at(value, l.number, origin);
        } else if (key == "lead") {
            c.lead = std::stoi(value);
        } else if (key == "guard") {
            c.guard = parse_number_at(value, l.number, origin);
        } else {
            fail_line(l.number, origin, "[controller] keys are kappa, R, lead, guard");
        }
    }
    c.bstate.kappa = c.kappa;
    c.bstate.R = c.R;
    c.bstate.lead = c.lead;

    const auto* gains = sec.find("gains");
    if (!gains) throw ValidationError(origin + ": missing [gains]");
    for (const auto& l : *gains) {
        auto [key, value] = split_assignment(l, origin);
        std::vector<double> vals;
        if (!value.empty()) {
            std::istringstream vs(value);
            std::string tok;
            while (std::getline(vs, tok, ',')) vals.push_back(std::stod(tok));
        }
        if (key == "a1") {
            c.gains.a[0] = std::move(vals);
        } else if (key == "a2") {
            c.gains.a[1] = std::move(vals);
        } else {
            fail_line(l.number, origin, "[gains] keys are a1 and a2");
        }
    }
    if (static_cast<int>(c.gains.a[0].size()) != c.kappa.a1 ||
        static_cast<int>(c.gains.a[1].size()) != c.kappa.a2) {
        throw ValidationError(origin + ": gain counts do not match kappa");
    }

    const auto* vform = sec.find("v_form");
    if (!vform) throw ValidationError(origin + ": missing [v_form]");
    c.bstate.v_form[0].assign(c.kappa.a1, Expr());
    c.bstate.v_form[1].assign(c.kappa.a2, Expr());
    for (const auto& l : *vform) {
        auto [key, value] = split_assignment(l, origin);
        Expr keyvar = parse_expr_at(key, l.number, origin);
        if (!keyvar.is_variable() || keyvar.variable().kind != VarKind::RefJet) {
            fail_line(l.number, origin, "[v_form] keys are y<j>_<beta>");
        }
        int j = keyvar.variable().index;
        int beta = keyvar.variable().order;
        if (beta >= c.kappa[j]) fail_line(l.number, origin, "v_form order exceeds kappa");
        c.bstate.v_form[j - 1][beta] = parse_expr_at(value, l.number, origin);
    }

    const auto* chain = sec.find("v_chain");
    if (!chain) throw ValidationError(origin + ": missing [v_chain]");
    for (const auto& l : *chain) {
        auto [key, value] = split_assignment(l, origin);
        Expr keyvar = parse_expr_at(key, l.number, origin);
        if (!keyvar.is_variable() || keyvar.variable().kind != VarKind::NewInputJet) {
            fail_line(l.number, origin, "[v_chain] keys are v<j>_<lambda>");
        }
        c.chain.push_back({keyvar.variable(), parse_expr_at(value, l.number, origin)});
    }

    const auto* law = sec.find("law");
    if (!law) throw ValidationError(origin + ": missing [law]");
    std::array<bool, 2> got{false, false};
    for (const auto& l : *law) {
        auto [key, value] = split_assignment(l, origin);
        if (key == "u1") {
            c.law[0] = parse_expr_at(value, l.number, origin);
            got[0] = true;
        } else if (key == "u2") {
            c.law[1] = parse_expr_at(value, l.number, origin);
            got[1] = true;
        } else {
            fail_line(l.number, origin, "[law] keys are u1 and u2");
        }
    }
    if (!got[0] || !got[1]) throw ValidationError(origin + ": law must define u1 and u2");
    return cf;
}

}  // namespace flatforge
