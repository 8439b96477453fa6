// Line-oriented text format for kernel programs.
//
//   mpsim-program 1
//   name matmul_baseline
//   dims 8 8 8
//   param unroll 1
//   queue <id> <producer> <consumer>
//   core <id> <instruction count>
//   fma d1 s1,17,21
//   load d17 s25 @0
//   qpop d17 q3 f4
//   vload d16 @0 vl64 bcast
//   barrier
//
// Blank lines and lines starting with '#' are ignored.

#include <charconv>
#include <optional>

#include <fmt/format.h>

#include "mempool/kernel.hpp"

namespace mempool {

ProgramParseError::ProgramParseError(std::size_t line, const std::string &what)
    : std::runtime_error(fmt::format("line {}: {}", line, what)), line_(line) {}

namespace {

constexpr std::string_view kMagic = "mpsim-program";
constexpr int kVersion = 1;

void append_instruction(std::string &out, const Instruction &in) {
  out += mnemonic(in.op);
  if (in.dst != kNoReg)
    out += fmt::format(" d{}", in.dst);
  if (in.num_src > 0) {
    out += " s";
    for (std::size_t i = 0; i < in.num_src; ++i) {
      if (i)
        out += ',';
      out += std::to_string(in.src[i]);
    }
  }
  if (is_memory_op(in.op))
    out += fmt::format(" @{}", in.address());
  if (is_queue_op(in.op))
    out += fmt::format(" q{}", in.queue());
  if (in.has_forward())
    out += fmt::format(" f{}", in.forward);
  if (is_vector_op(in.op))
    out += fmt::format(" vl{}", in.vector_length);
  if (in.broadcast())
    out += " bcast";
  out += '\n';
}

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> toks;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r'))
      ++i;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r')
      ++j;
    if (j > i)
      toks.push_back(line.substr(i, j - i));
    i = j;
  }
  return toks;
}

template <typename T> std::optional<T> parse_uint(std::string_view s) {
  T v{};
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || p != s.data() + s.size() || s.empty())
    return std::nullopt;
  return v;
}

template <typename T> std::optional<T> parse_int(std::string_view s) { return parse_uint<T>(s); }

std::optional<Opcode> opcode_from(std::string_view m) {
  for (std::size_t i = 0; i < kOpcodeCount; ++i)
    if (mnemonic(Opcode(i)) == m)
      return Opcode(i);
  return std::nullopt;
}

class Parser {
public:
  explicit Parser(std::string_view text) : text_(text) {}

  KernelProgram run() {
    KernelProgram p;
    bool seen_magic = false;
    std::vector<Instruction> *current = nullptr;
    std::size_t expected = 0, current_line = 0;

    auto close_stream = [&] {
      if (current && current->size() != expected)
        throw ProgramParseError(current_line,
                                fmt::format("core declares {} instructions but has {}",
                                            expected, current->size()));
    };

    while (next_line()) {
      auto toks = split_ws(line_);
      if (toks.empty() || toks[0].starts_with('#'))
        continue;
      if (!seen_magic) {
        if (toks.size() != 2 || toks[0] != kMagic)
          fail(fmt::format("expected '{} {}' header", kMagic, kVersion));
        if (parse_int<int>(toks[1]) != kVersion)
          fail(fmt::format("unsupported format version '{}'", toks[1]));
        seen_magic = true;
        continue;
      }
      const auto head = toks[0];
      if (head == "name") {
        if (toks.size() != 2)
          fail("name takes exactly one token");
        p.meta.name = std::string(toks[1]);
      } else if (head == "dims") {
        if (toks.size() != 4)
          fail("dims takes M N K");
        p.meta.dims = {num<std::uint32_t>(toks[1]), num<std::uint32_t>(toks[2]),
                       num<std::uint32_t>(toks[3])};
      } else if (head == "param") {
        if (toks.size() != 3)
          fail("param takes a name and an integer value");
        std::int64_t v = 0;
        auto [ptr, ec] = std::from_chars(toks[2].data(), toks[2].data() + toks[2].size(), v);
        if (ec != std::errc{} || ptr != toks[2].data() + toks[2].size())
          fail(fmt::format("bad parameter value '{}'", toks[2]));
        p.meta.params.emplace_back(std::string(toks[1]), v);
      } else if (head == "queue") {
        if (toks.size() != 4)
          fail("queue takes id producer consumer");
        p.queues.push_back({num<QueueId>(toks[1]), num<CoreId>(toks[2]), num<CoreId>(toks[3])});
      } else if (head == "core") {
        if (toks.size() != 3)
          fail("core takes an id and an instruction count");
        close_stream();
        const auto id = num<CoreId>(toks[1]);
        if (id != p.streams.size())
          fail(fmt::format("expected core {} next, got {}", p.streams.size(), id));
        expected = num<std::size_t>(toks[2]);
        p.streams.emplace_back();
        current = &p.streams.back();
        current->reserve(expected);
        current_line = lineno_;
      } else {
        if (!current)
          fail(fmt::format("instruction '{}' before any core section", head));
        current->push_back(instruction(toks));
      }
    }
    if (!seen_magic)
      throw ProgramParseError(lineno_ ? lineno_ : 1, "empty document (missing header)");
    close_stream();
    return p;
  }

private:
  bool next_line() {
    if (pos_ >= text_.size())
      return false;
    auto nl = text_.find('\n', pos_);
    if (nl == std::string_view::npos)
      nl = text_.size();
    line_ = text_.substr(pos_, nl - pos_);
    pos_ = nl + 1;
    ++lineno_;
    return true;
  }

  [[noreturn]] void fail(const std::string &msg) const { throw ProgramParseError(lineno_, msg); }

  template <typename T> T num(std::string_view s) const {
    auto v = parse_uint<T>(s);
    if (!v)
      fail(fmt::format("expected an unsigned integer, got '{}'", s));
    return *v;
  }

  Instruction instruction(const std::vector<std::string_view> &toks) const {
    auto op = opcode_from(toks[0]);
    if (!op)
      fail(fmt::format("unknown opcode '{}'", toks[0]));
    Instruction in;
    in.op = *op;
    bool has_addr = false, has_queue = false, has_vl = false;
    for (std::size_t t = 1; t < toks.size(); ++t) {
      const auto tok = toks[t];
      if (tok == "bcast") {
        in.flags |= Instruction::kBroadcast;
      } else if (tok.starts_with("vl")) {
        in.vector_length = num<std::uint16_t>(tok.substr(2));
        has_vl = true;
      } else if (tok.starts_with('d')) {
        in.dst = num<Reg>(tok.substr(1));
      } else if (tok.starts_with('s')) {
        auto rest = tok.substr(1);
        while (true) {
          const auto comma = rest.find(',');
          if (in.num_src == kMaxSources)
            fail("too many source registers");
          in.src[in.num_src++] = num<Reg>(rest.substr(0, comma));
          if (comma == std::string_view::npos)
            break;
          rest = rest.substr(comma + 1);
        }
      } else if (tok.starts_with('@')) {
        in.operand = num<std::uint32_t>(tok.substr(1));
        has_addr = true;
      } else if (tok.starts_with('q')) {
        in.operand = num<QueueId>(tok.substr(1));
        has_queue = true;
      } else if (tok.starts_with('f')) {
        in.forward = num<QueueId>(tok.substr(1));
      } else {
        fail(fmt::format("unrecognised operand '{}'", tok));
      }
    }
    if (is_memory_op(in.op) && !has_addr)
      fail(fmt::format("{} needs an address operand", toks[0]));
    if (is_queue_op(in.op) && !has_queue)
      fail(fmt::format("{} needs a queue operand", toks[0]));
    if (is_vector_op(in.op) && !has_vl)
      fail(fmt::format("{} needs a vector length", toks[0]));
    if (!is_memory_op(in.op) && has_addr)
      fail(fmt::format("{} takes no address", toks[0]));
    if (!is_queue_op(in.op) && has_queue)
      fail(fmt::format("{} takes no queue", toks[0]));
    return in;
  }

  std::string_view text_;
  std::string_view line_;
  std::size_t pos_ = 0;
  std::size_t lineno_ = 0;
};

} // namespace

std::string serialize_program(const KernelProgram &p) {
  std::string out;
  out += fmt::format("{} {}\n", kMagic, kVersion);
  if (!p.meta.name.empty())
    out += fmt::format("name {}\n", p.meta.name);
  if (p.meta.dims != MatmulDims{})
    out += fmt::format("dims {} {} {}\n", p.meta.dims.M, p.meta.dims.N, p.meta.dims.K);
  for (const auto &[k, v] : p.meta.params)
    out += fmt::format("param {} {}\n", k, v);
  for (const auto &q : p.queues)
    out += fmt::format("queue {} {} {}\n", q.id, q.producer, q.consumer);
  for (std::size_t c = 0; c < p.streams.size(); ++c) {
    out += fmt::format("core {} {}\n", c, p.streams[c].size());
    for (const auto &in : p.streams[c])
      append_instruction(out, in);
  }
  return out;
}

KernelProgram parse_program(std::string_view text) { return Parser(text).run(); }

} // namespace mempool
