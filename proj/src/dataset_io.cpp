#include "dataset_io.hpp"

#include <fstream>
#include <string>

#include <json.hpp>

#include "binio.hpp"

namespace metacsi::io {

namespace {

constexpr std::string_view kMagic = "CSID";
constexpr std::uint16_t kVersion = 1;

using json = nlohmann::json;

void check_shape(std::size_t K, std::size_t M, const RealMatrix& m, const char* what) {
    if (m.rows() != K || m.cols() != M) fail(ErrorKind::data, std::string(what) + " matrix shape differs within dataset");
}

void check_label(const Dataset& ds, const sim::Label& label) {
    if (label.kind != ds.label_kind) fail(ErrorKind::data, "label variant differs within dataset");
    if (label.kind == sim::LabelKind::coords && label.coords.size() != ds.n_people) {
        fail(ErrorKind::data, "person count differs within dataset");
    }
}

void validate(const Dataset& ds) {
    if (ds.kind == PayloadKind::raw) {
        if (!ds.samples.empty()) fail(ErrorKind::invalid_argument, "raw dataset carries preprocessed samples");
        for (const auto& p : ds.packets) {
            if (p.csi.rows() != ds.K || p.csi.cols() != ds.M) fail(ErrorKind::data, "CSI shape differs within dataset");
            check_label(ds, p.label);
        }
    } else {
        if (!ds.packets.empty()) fail(ErrorKind::invalid_argument, "preprocessed dataset carries raw packets");
        for (const auto& s : ds.samples) {
            check_shape(ds.K, ds.M, s.amplitude, "amplitude");
            check_shape(ds.K, ds.M, s.real_part, "real");
            check_shape(ds.K, ds.M, s.imag_part, "imaginary");
            check_label(ds, s.label);
        }
    }
}

std::uint8_t schema_tag(const Dataset& ds) {
    return static_cast<std::uint8_t>((static_cast<unsigned>(ds.kind) << 4) | static_cast<unsigned>(ds.label_kind));
}

void expect_kind(PayloadKind actual, std::optional<PayloadKind> expected) {
    if (expected && *expected != actual) {
        fail(ErrorKind::data, std::string("schema tag mismatch: file holds ") + payload_name(actual) +
                                  " records, expected " + payload_name(*expected));
    }
}

std::optional<sim::LabelKind> parse_label_kind(std::string_view s) {
    if (s == "count") return sim::LabelKind::count;
    if (s == "sector") return sim::LabelKind::sector;
    if (s == "coords") return sim::LabelKind::coords;
    return std::nullopt;
}

}  // namespace

const char* payload_name(PayloadKind kind) { return kind == PayloadKind::raw ? "raw" : "preprocessed"; }

Dataset Dataset::from_packets(std::vector<sim::CsiPacket> packets) {
    Dataset ds;
    ds.kind = PayloadKind::raw;
    if (!packets.empty()) {
        ds.K = packets.front().csi.rows();
        ds.M = packets.front().csi.cols();
        ds.label_kind = packets.front().label.kind;
        ds.n_people = packets.front().label.coords.size();
    }
    ds.packets = std::move(packets);
    validate(ds);
    return ds;
}

Dataset Dataset::from_samples(std::vector<prep::PreprocessedSample> samples) {
    Dataset ds;
    ds.kind = PayloadKind::preprocessed;
    if (!samples.empty()) {
        ds.K = samples.front().amplitude.rows();
        ds.M = samples.front().amplitude.cols();
        ds.label_kind = samples.front().label.kind;
        ds.n_people = samples.front().label.coords.size();
    }
    ds.samples = std::move(samples);
    validate(ds);
    return ds;
}

void write_binary(const std::filesystem::path& path, const Dataset& ds) {
    validate(ds);
    binio::ByteWriter w;
    w.bytes(kMagic);
    w.u16(kVersion);
    w.u8(schema_tag(ds));
    w.u32(static_cast<std::uint32_t>(ds.K));
    w.u32(static_cast<std::uint32_t>(ds.M));
    w.u32(static_cast<std::uint32_t>(ds.n_people));
    w.u64(ds.size());

    auto put_label = [&](const sim::Label& label) {
        if (label.kind == sim::LabelKind::coords) {
            for (const Point& p : label.coords) {
                w.f64(p.x);
                w.f64(p.y);
            }
        } else {
            w.i32(label.cls);
        }
    };
    if (ds.kind == PayloadKind::raw) {
        for (const auto& p : ds.packets) {
            w.i64(p.index);
            put_label(p.label);
            for (const auto& z : p.csi.data()) {
                w.f64(z.real());
                w.f64(z.imag());
            }
        }
    } else {
        for (const auto& s : ds.samples) {
            w.i64(s.index);
            put_label(s.label);
            for (const RealMatrix* m : {&s.amplitude, &s.real_part, &s.imag_part}) {
                for (double v : m->data()) w.f64(v);
            }
        }
    }
    w.write_file(path);
}

Dataset read_binary(const std::filesystem::path& path, std::optional<PayloadKind> expected) {
    const std::vector<std::uint8_t> bytes = binio::read_file(path);
    binio::ByteReader r(bytes);
    if (r.bytes(4, "magic") != kMagic) fail(ErrorKind::data, path.string() + ": bad magic, not a CSID dataset");
    const std::uint16_t version = r.u16("version");
    if (version != kVersion) fail(ErrorKind::data, "unsupported dataset version " + std::to_string(version));
    const std::uint8_t tag = r.u8("schema tag");
    const unsigned payload = tag >> 4;
    const unsigned label = tag & 0x0f;
    if (payload > 1 || label > 2) fail(ErrorKind::data, "unknown schema tag " + std::to_string(tag));

    Dataset ds;
    ds.kind = static_cast<PayloadKind>(payload);
    ds.label_kind = static_cast<sim::LabelKind>(label);
    expect_kind(ds.kind, expected);
    ds.K = r.u32("K");
    ds.M = r.u32("M");
    ds.n_people = r.u32("N_L");
    const std::uint64_t count = r.u64("record count");

    auto get_label = [&]() {
        if (ds.label_kind == sim::LabelKind::coords) {
            std::vector<Point> pts(ds.n_people);
            for (Point& p : pts) {
                p.x = r.f64("label x");
                p.y = r.f64("label y");
            }
            return sim::Label::positions(std::move(pts));
        }
        return sim::Label{ds.label_kind, r.i32("label class"), {}};
    };
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::int64_t index = r.i64("record index");
        sim::Label lbl = get_label();
        if (ds.kind == PayloadKind::raw) {
            sim::CsiPacket p{index, ComplexMatrix(ds.K, ds.M), std::move(lbl)};
            for (auto& z : p.csi.data()) {
                const double re = r.f64("CSI real part");
                const double im = r.f64("CSI imaginary part");
                z = {re, im};
            }
            ds.packets.push_back(std::move(p));
        } else {
            prep::PreprocessedSample s;
            s.index = index;
            s.label = std::move(lbl);
            for (RealMatrix* m : {&s.amplitude, &s.real_part, &s.imag_part}) {
                *m = RealMatrix(ds.K, ds.M);
                for (double& v : m->data()) v = r.f64("sample value");
            }
            ds.samples.push_back(std::move(s));
        }
    }
    if (r.remaining() != 0) {
        fail(ErrorKind::data, "unexpected trailing bytes at offset " + std::to_string(r.offset()));
    }
    return ds;
}

void write_jsonl(const std::filesystem::path& path, const Dataset& ds) {
    validate(ds);
    std::ofstream out(path, std::ios::trunc);
    if (!out) fail(ErrorKind::data, "cannot open " + path.string() + " for writing");
    json header = {{"format", "CSID"},
                   {"version", kVersion},
                   {"payload", payload_name(ds.kind)},
                   {"label", sim::label_kind_name(ds.label_kind)},
                   {"K", ds.K},
                   {"M", ds.M},
                   {"n_people", ds.n_people}};
    out << header.dump() << '\n';

    auto label_json = [](const sim::Label& l) {
        if (l.kind == sim::LabelKind::coords) {
            json pts = json::array();
            for (const Point& p : l.coords) pts.push_back({p.x, p.y});
            return json{{"coords", pts}};
        }
        return json{{"class", l.cls}};
    };
    for (std::size_t i = 0; i < ds.size(); ++i) {
        json rec;
        if (ds.kind == PayloadKind::raw) {
            const auto& p = ds.packets[i];
            rec["index"] = p.index;
            rec["label"] = label_json(p.label);
            std::vector<double> re, im;
            for (const auto& z : p.csi.data()) {
                re.push_back(z.real());
                im.push_back(z.imag());
            }
            rec["re"] = re;
            rec["im"] = im;
        } else {
            const auto& s = ds.samples[i];
            rec["index"] = s.index;
            rec["label"] = label_json(s.label);
            rec["amplitude"] = s.amplitude.data();
            rec["real"] = s.real_part.data();
            rec["imag"] = s.imag_part.data();
        }
        out << rec.dump() << '\n';
    }
    if (!out) fail(ErrorKind::data, "write failed for " + path.string());
}

Dataset read_jsonl(const std::filesystem::path& path, std::optional<PayloadKind> expected) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::data, "cannot open " + path.string());
    std::string line;
    std::size_t line_no = 0;
    Dataset ds;
    try {
        if (!std::getline(in, line)) fail(ErrorKind::data, path.string() + ": empty JSONL dataset");
        ++line_no;
        const json header = json::parse(line);
        if (header.value("format", "") != "CSID") fail(ErrorKind::data, "JSONL header is not a CSID dataset");
        if (header.at("version").get<int>() != kVersion) fail(ErrorKind::data, "unsupported JSONL dataset version");
        const std::string payload = header.at("payload").get<std::string>();
        if (payload != "raw" && payload != "preprocessed") fail(ErrorKind::data, "unknown payload " + payload);
        ds.kind = payload == "raw" ? PayloadKind::raw : PayloadKind::preprocessed;
        expect_kind(ds.kind, expected);
        const auto lk = parse_label_kind(header.at("label").get<std::string>());
        if (!lk) fail(ErrorKind::data, "unknown label variant in JSONL header");
        ds.label_kind = *lk;
        ds.K = header.at("K").get<std::size_t>();
        ds.M = header.at("M").get<std::size_t>();
        ds.n_people = header.value("n_people", std::size_t{0});

        auto read_matrix = [&](const json& arr) {
            RealMatrix m(ds.K, ds.M);
            const auto v = arr.get<std::vector<double>>();
            if (v.size() != m.size()) fail(ErrorKind::data, "matrix length mismatch on line " + std::to_string(line_no));
            m.data() = v;
            return m;
        };
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            const json rec = json::parse(line);
            sim::Label label;
            const json& lj = rec.at("label");
            if (ds.label_kind == sim::LabelKind::coords) {
                std::vector<Point> pts;
                for (const auto& p : lj.at("coords")) pts.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
                label = sim::Label::positions(std::move(pts));
            } else {
                label = sim::Label{ds.label_kind, lj.at("class").get<int>(), {}};
            }
            const auto index = rec.at("index").get<std::int64_t>();
            if (ds.kind == PayloadKind::raw) {
                const RealMatrix re = read_matrix(rec.at("re"));
                const RealMatrix im = read_matrix(rec.at("im"));
                sim::CsiPacket p{index, ComplexMatrix(ds.K, ds.M), std::move(label)};
                for (std::size_t i = 0; i < p.csi.size(); ++i) p.csi.data()[i] = {re.data()[i], im.data()[i]};
                ds.packets.push_back(std::move(p));
            } else {
                prep::PreprocessedSample s{read_matrix(rec.at("amplitude")), read_matrix(rec.at("real")),
                                           read_matrix(rec.at("imag")), std::move(label), index};
                ds.samples.push_back(std::move(s));
            }
        }
    } catch (const json::exception& e) {
        fail(ErrorKind::data, path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    validate(ds);
    return ds;
}

Dataset read_dataset(const std::filesystem::path& path, std::optional<PayloadKind> expected) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::data, "cannot open " + path.string());
    char head[4] = {};
    in.read(head, 4);
    if (in.gcount() == 4 && std::string_view(head, 4) == kMagic) return read_binary(path, expected);
    return read_jsonl(path, expected);
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
    if (path.extension() == ".jsonl") {
        write_jsonl(path, ds);
    } else {
        write_binary(path, ds);
    }
}

}  // namespace metacsi::io
