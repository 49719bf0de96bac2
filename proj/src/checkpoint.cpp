#include "ckn/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <map>
#include <sstream>

namespace ckn {

namespace {

constexpr char kMagic[4] = {'C', 'K', 'N', '1'};

std::uint64_t fnv1a(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Writer {
public:
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    template <class U>
    void uint(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    void f64(double v) { uint(std::bit_cast<std::uint64_t>(v)); }
    void str(const std::string& s) { raw(s.data(), s.size()); }
    std::string& bytes() { return buf_; }

private:
    std::string buf_;
};

class Reader {
public:
    explicit Reader(const std::string& b) : buf_(b) {}
    void need(std::size_t n, const char* what) const {
        if (pos_ + n > buf_.size())
            throw CheckpointError(std::string("checkpoint truncated while reading ") + what +
                                  " at byte " + std::to_string(pos_));
    }
    template <class U>
    U uint(const char* what) {
        need(sizeof(U), what);
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    double f64(const char* what) { return std::bit_cast<double>(uint<std::uint64_t>(what)); }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t pos() const { return pos_; }

private:
    const std::string& buf_;
    std::size_t pos_ = 0;
};

struct Tensor {
    std::vector<std::uint64_t> dims;
    std::vector<double> data;
};

Tensor from_matrix(const Matrix& M) {
    Tensor t{{static_cast<std::uint64_t>(M.rows()), static_cast<std::uint64_t>(M.cols())}, {}};
    t.data.reserve(static_cast<std::size_t>(M.size()));
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index j = 0; j < M.cols(); ++j) t.data.push_back(M(i, j));
    return t;
}

Tensor from_vector(const Vector& v) {
    return {{static_cast<std::uint64_t>(v.size())}, std::vector<double>(v.data(), v.data() + v.size())};
}

Matrix to_matrix(const Tensor& t, const std::string& name) {
    if (t.dims.size() != 2) throw CheckpointError("record " + name + " is not a matrix");
    const auto r = static_cast<Eigen::Index>(t.dims[0]);
    const auto c = static_cast<Eigen::Index>(t.dims[1]);
    Matrix M(r, c);
    for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j) M(i, j) = t.data[static_cast<std::size_t>(i * c + j)];
    return M;
}

Vector to_vector(const Tensor& t, const std::string& name) {
    if (t.dims.size() != 1) throw CheckpointError("record " + name + " is not a vector");
    return Eigen::Map<const Vector>(t.data.data(), static_cast<Eigen::Index>(t.data.size()));
}

}  // namespace

Checkpoint make_checkpoint(const TrainState& s, std::vector<ProvenanceStep> provenance) {
    std::ostringstream rng;
    rng << s.rng;
    return {s.model, s.iteration, s.step, rng.str(), std::move(provenance)};
}

TrainState restore_state(const Checkpoint& c) {
    TrainState s;
    s.model = c.model;
    s.iteration = c.iteration;
    s.step = c.step;
    if (!c.rng_state.empty()) {
        std::istringstream in(c.rng_state);
        in >> s.rng;
        if (!in) throw CheckpointError("checkpoint RNG state does not parse");
    }
    return s;
}

void save_checkpoint(const std::string& path, const Checkpoint& c) {
    std::map<std::string, Tensor> records;  // sorted names give a stable layout
    for (std::size_t l = 0; l < c.model.weights.size(); ++l) {
        char name[32];
        std::snprintf(name, sizeof name, "weights.%03zu", l);
        records[name] = from_matrix(c.model.weights[l]);
    }
    records["norm.center"] = from_vector(c.model.norm.center);
    records["norm.scale"] = {{}, {c.model.norm.scale}};
    records["classifier.V"] = from_matrix(c.model.cls.V);
    records["classifier.c"] = from_vector(c.model.cls.c);
    Tensor rng{{c.rng_state.size()}, {}};
    for (unsigned char ch : c.rng_state) rng.data.push_back(ch);
    records["rng"] = std::move(rng);

    Json meta;
    meta["spec"] = to_json(c.model.spec);
    meta["lambda"] = c.model.lambda;
    meta["iteration"] = c.iteration;
    meta["step"] = c.step;
    meta["provenance"] = Json::array();
    for (const auto& st : c.provenance) meta["provenance"].push_back({{"op", st.op}, {"params", st.params}});
    const std::string meta_text = meta.dump();

    Writer w;
    w.raw(kMagic, 4);
    w.uint<std::uint32_t>(kCheckpointVersion);
    w.uint<std::uint64_t>(meta_text.size());
    w.str(meta_text);
    w.uint<std::uint32_t>(static_cast<std::uint32_t>(records.size()));
    for (const auto& [name, t] : records) {
        w.uint<std::uint32_t>(static_cast<std::uint32_t>(name.size()));
        w.str(name);
        w.uint<std::uint32_t>(static_cast<std::uint32_t>(t.dims.size()));
        for (auto d : t.dims) w.uint<std::uint64_t>(d);
        for (double v : t.data) w.f64(v);
    }
    w.uint<std::uint64_t>(fnv1a(w.bytes()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write " + path);
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError("failed writing " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open " + path);
    const std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    if (bytes.size() < 4 || bytes.compare(0, 4, kMagic, 4) != 0)
        throw CheckpointError(path + ": not a checkpoint (bad magic)");
    if (bytes.size() < 12) throw CheckpointError(path + ": truncated");
    const std::string body = bytes.substr(0, bytes.size() - 8);
    Reader r(body);
    r.str(4, "magic");
    const auto version = r.uint<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw CheckpointError(path + ": unsupported checkpoint version " + std::to_string(version));
    {
        Reader cs(bytes);
        cs.str(bytes.size() - 8, "body");
        if (cs.uint<std::uint64_t>("checksum") != fnv1a(body))
            throw CheckpointError(path + ": checksum mismatch");
    }

    Checkpoint c;
    try {
        const auto meta_len = r.uint<std::uint64_t>("meta length");
        const Json meta = Json::parse(r.str(meta_len, "meta"));
        c.model.spec = network_from_json(meta.at("spec"));
        c.model.lambda = meta.at("lambda").get<double>();
        c.iteration = meta.at("iteration").get<int>();
        c.step = meta.at("step").get<double>();
        for (const auto& st : meta.at("provenance"))
            c.provenance.push_back({st.at("op").get<std::string>(), st.at("params")});
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(path + ": bad metadata: " + e.what());
    }

    std::map<std::string, Tensor> records;
    const auto count = r.uint<std::uint32_t>("record count");
    for (std::uint32_t i = 0; i < count; ++i) {
        const auto name_len = r.uint<std::uint32_t>("record name length");
        std::string name = r.str(name_len, "record name");
        const auto rank = r.uint<std::uint32_t>("rank");
        if (rank > 8) throw CheckpointError(path + ": implausible rank in record " + name);
        Tensor t;
        std::uint64_t total = 1;
        for (std::uint32_t k = 0; k < rank; ++k) {
            t.dims.push_back(r.uint<std::uint64_t>("dims"));
            total *= t.dims.back();
        }
        r.need(total * 8, "payload");
        t.data.reserve(total);
        for (std::uint64_t k = 0; k < total; ++k) t.data.push_back(r.f64("payload"));
        records[std::move(name)] = std::move(t);
    }
    if (r.pos() != body.size()) throw CheckpointError(path + ": trailing bytes after records");

    auto get = [&](const std::string& name) -> const Tensor& {
        auto it = records.find(name);
        if (it == records.end()) throw CheckpointError(path + ": missing record " + name);
        return it->second;
    };
    const std::size_t L = c.model.spec.layers.size();
    for (std::size_t l = 0; l < L; ++l) {
        char name[32];
        std::snprintf(name, sizeof name, "weights.%03zu", l);
        c.model.weights.push_back(to_matrix(get(name), name));
    }
    c.model.norm.center = to_vector(get("norm.center"), "norm.center");
    const Tensor& sc = get("norm.scale");
    if (!sc.dims.empty() || sc.data.size() != 1) throw CheckpointError(path + ": bad norm.scale");
    c.model.norm.scale = sc.data.front();
    c.model.cls.V = to_matrix(get("classifier.V"), "classifier.V");
    c.model.cls.c = to_vector(get("classifier.c"), "classifier.c");
    for (double ch : get("rng").data) c.rng_state.push_back(static_cast<char>(static_cast<int>(ch)));

    try {
        const Network net(c.model.spec);
        net.check_weights(c.model.weights);
        const auto d = static_cast<Eigen::Index>(net.feature_dim());
        const auto K = static_cast<Eigen::Index>(c.model.spec.classes);
        if (c.model.norm.center.size() != d || c.model.cls.V.rows() != d ||
            c.model.cls.V.cols() != K || c.model.cls.c.size() != K)
            throw ShapeError("classifier does not match the network output");
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::exception& e) {
        throw CheckpointError(path + ": inconsistent contents: " + e.what());
    }
    return c;
}

std::string metrics_csv_header() { return "iteration,wall_seconds,train_loss,train_acc,val_acc"; }

std::string format_metrics_row(const MetricsRow& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.17g,%.17g,%.17g", r.iteration, r.wall_seconds,
                  r.train_loss, r.train_acc, r.val_acc);
    return buf;
}

void write_metrics_header(const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw Error("cannot write " + path);
    out << metrics_csv_header() << '\n';
}

void append_metrics_row(const std::string& path, const MetricsRow& r) {
    std::ofstream out(path, std::ios::app);
    if (!out) throw Error("cannot append to " + path);
    out << format_metrics_row(r) << '\n';
}

std::vector<MetricsRow> read_metrics_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != metrics_csv_header())
        throw FormatError(path + ": unexpected metrics header");
    std::vector<MetricsRow> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string f[5];
        for (auto& x : f)
            if (!std::getline(ss, x, ',')) throw FormatError(path + ": short row '" + line + "'");
        MetricsRow r;
        try {
            r.iteration = std::stoi(f[0]);
            r.wall_seconds = std::stod(f[1]);
            r.train_loss = std::stod(f[2]);
            r.train_acc = std::stod(f[3]);
            r.val_acc = std::stod(f[4]);
        } catch (const std::exception&) {
            throw FormatError(path + ": bad row '" + line + "'");
        }
        rows.push_back(r);
    }
    return rows;
}

}  // namespace ckn
