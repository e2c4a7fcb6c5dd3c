#pragma once

#include <cctype>
#include <cstdint>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace eer {

using i64 = std::int64_t;

struct SchemaError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EntityDecl {
  std::string name;
  i64 count = 0;  // number of instances
};

// Members are entity indices (0-based, into Schema::entities); an entity may
// appear more than once (self-relation).  one_entity marks a one-to-many
// relation: each line along that entity holds at most one record.
struct Relation {
  std::string name;
  std::vector<int> members;
  int one_entity = -1;

  int arity_of(int entity) const {
    int k = 0;
    for (int m : members) k += (m == entity);
    return k;
  }
  bool repeat_free() const {
    for (size_t a = 0; a < members.size(); ++a)
      for (size_t b = a + 1; b < members.size(); ++b)
        if (members[a] == members[b]) return false;
    return true;
  }
  bool operator==(const Relation&) const = default;
};

struct Schema {
  std::vector<EntityDecl> entities;
  std::vector<Relation> relations;

  int entity_index(const std::string& name) const {
    for (size_t d = 0; d < entities.size(); ++d)
      if (entities[d].name == name) return (int)d;
    return -1;
  }
  int relation_index(const std::string& name) const {
    for (size_t i = 0; i < relations.size(); ++i)
      if (relations[i].name == name) return (int)i;
    return -1;
  }
  bool operator==(const Schema& o) const {
    if (relations != o.relations || entities.size() != o.entities.size()) return false;
    for (size_t d = 0; d < entities.size(); ++d)
      if (entities[d].name != o.entities[d].name || entities[d].count != o.entities[d].count)
        return false;
    return true;
  }
  // Same entities and relations, instance counts free.  A layer's tying
  // depends only on this structure, so weights trained at one size apply at
  // any other.
  bool same_structure(const Schema& o) const {
    if (relations != o.relations || entities.size() != o.entities.size()) return false;
    for (size_t d = 0; d < entities.size(); ++d)
      if (entities[d].name != o.entities[d].name) return false;
    return true;
  }
};

inline std::vector<i64> relation_shape(const Schema& s, int i) {
  std::vector<i64> shape;
  for (int m : s.relations[i].members) shape.push_back(s.entities[m].count);
  return shape;
}

inline i64 relation_size(const Schema& s, int i) {
  i64 n = 1;
  for (int m : s.relations[i].members) n *= s.entities[m].count;
  return n;
}

inline i64 total_size(const Schema& s) {
  i64 n = 0;
  for (size_t i = 0; i < s.relations.size(); ++i) n += relation_size(s, (int)i);
  return n;
}

// entity index -> multiplicity
using EntityMultiset = std::map<int, int>;

inline EntityMultiset multiset_of(const Relation& r) {
  EntityMultiset m;
  for (int d : r.members) ++m[d];
  return m;
}

inline EntityMultiset multiset_union(const Relation& a, const Relation& b) {
  EntityMultiset m = multiset_of(a);
  for (auto [d, k] : multiset_of(b)) m[d] += k;
  return m;
}

inline EntityMultiset multiset_intersection(const Relation& a, const Relation& b) {
  EntityMultiset ma = multiset_of(a), mb = multiset_of(b), m;
  for (auto [d, k] : ma) {
    auto it = mb.find(d);
    if (it != mb.end()) m[d] = std::min(k, it->second);
  }
  return m;
}

namespace detail {

inline bool valid_name(const std::string& t) {
  if (t.empty()) return false;
  if (!std::isalpha((unsigned char)t[0]) && t[0] != '_') return false;
  for (char c : t)
    if (!std::isalnum((unsigned char)c) && c != '_') return false;
  return t != "entity" && t != "relation" && t != "one";
}

[[noreturn]] inline void schema_fail(int line, const std::string& msg) {
  throw SchemaError("line " + std::to_string(line) + ": " + msg);
}

}  // namespace detail

// Text form, one declaration per line:
//   entity <name> <count>
//   relation <name> <entity>... [one <entity>]
// '#' starts a comment.  Entities must be declared before use; names are
// unique identifiers and the keywords are reserved.
inline Schema parse_schema(const std::string& text) {
  Schema s;
  std::istringstream in(text);
  std::string raw;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    if (auto h = raw.find('#'); h != std::string::npos) raw.resize(h);
    std::istringstream ls(raw);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok[0] == "entity") {
      if (tok.size() != 3) detail::schema_fail(lineno, "expected: entity <name> <count>");
      if (!detail::valid_name(tok[1])) detail::schema_fail(lineno, "bad entity name '" + tok[1] + "'");
      if (s.entity_index(tok[1]) >= 0) detail::schema_fail(lineno, "duplicate entity '" + tok[1] + "'");
      i64 count = 0;
      try {
        size_t used = 0;
        count = std::stoll(tok[2], &used);
        if (used != tok[2].size()) throw std::invalid_argument(tok[2]);
      } catch (const std::exception&) {
        detail::schema_fail(lineno, "bad count '" + tok[2] + "'");
      }
      if (count < 1) detail::schema_fail(lineno, "entity count must be positive");
      s.entities.push_back({tok[1], count});
    } else if (tok[0] == "relation") {
      if (tok.size() < 3) detail::schema_fail(lineno, "expected: relation <name> <entity>...");
      if (!detail::valid_name(tok[1])) detail::schema_fail(lineno, "bad relation name '" + tok[1] + "'");
      if (s.relation_index(tok[1]) >= 0) detail::schema_fail(lineno, "duplicate relation '" + tok[1] + "'");
      Relation r;
      r.name = tok[1];
      size_t end = tok.size();
      std::string one_name;
      if (end >= 5 && tok[end - 2] == "one") {
        one_name = tok[end - 1];
        end -= 2;
      }
      for (size_t t = 2; t < end; ++t) {
        int d = s.entity_index(tok[t]);
        if (d < 0) detail::schema_fail(lineno, "undeclared entity '" + tok[t] + "'");
        r.members.push_back(d);
      }
      if (!one_name.empty()) {
        int d = s.entity_index(one_name);
        if (d < 0) detail::schema_fail(lineno, "undeclared entity '" + one_name + "'");
        if (r.arity_of(d) == 0) detail::schema_fail(lineno, "'one' entity is not a member");
        r.one_entity = d;
      }
      s.relations.push_back(std::move(r));
    } else {
      detail::schema_fail(lineno, "unknown declaration '" + tok[0] + "'");
    }
  }
  if (s.relations.empty()) throw SchemaError("schema declares no relations");
  return s;
}

inline std::string render_schema(const Schema& s) {
  std::ostringstream out;
  for (const auto& e : s.entities) out << "entity " << e.name << " " << e.count << "\n";
  for (const auto& r : s.relations) {
    out << "relation " << r.name;
    for (int m : r.members) out << " " << s.entities[m].name;
    if (r.one_entity >= 0) out << " one " << s.entities[r.one_entity].name;
    out << "\n";
  }
  return out.str();
}

// Hash of the structure only (not instance counts); guards weight files
// against schema mismatch while allowing re-use across instance sizes.
inline std::uint64_t structure_hash(const Schema& s) {
  std::uint64_t h = 1469598103934665603ull;
  auto feed = [&h](const std::string& t) {
    for (unsigned char c : t) {
      h ^= c;
      h *= 1099511628211ull;
    }
    h ^= 0xff;
    h *= 1099511628211ull;
  };
  for (const auto& e : s.entities) feed(e.name);
  feed("|");
  for (const auto& r : s.relations) {
    feed(r.name);
    for (int m : r.members) feed(s.entities[m].name);
    if (r.one_entity >= 0) feed("one:" + s.entities[r.one_entity].name);
    feed(";");
  }
  return h;
}

}  // namespace eer
