#include "cupid/dataset.hpp"

#include <sstream>

#include "cupid/util.hpp"

namespace cupid {

namespace {
constexpr char kMagic[4] = {'C', 'P', 'W', '1'};
}

void write_cpw1(const std::string& path, const std::vector<EcgWindow>& windows) {
    ByteWriter w;
    w.bytes(kMagic, 4);
    w.u32(static_cast<uint32_t>(windows.size()));
    for (const EcgWindow& win : windows) {
        if (static_cast<int64_t>(win.samples.size()) != kWindowSamples)
            throw io_error("cpw1: window has " + std::to_string(win.samples.size()) +
                           " samples, format requires " + std::to_string(kWindowSamples));
        for (real v : win.samples) w.f32(static_cast<float>(v));
        w.i16(static_cast<int16_t>(win.label));
        w.f32(static_cast<float>(win.sdnn_ms));
        w.str_u16(win.patient_id);
    }
    const auto& buf = w.data();
    write_file_bytes(path, buf.data(), buf.size());
}

std::vector<EcgWindow> read_cpw1(const std::string& path) {
    const auto bytes = read_file_bytes(path);
    ByteReader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::string(magic, 4) != std::string(kMagic, 4))
        throw parse_error("cpw1: bad magic in " + path);
    const uint32_t count = r.u32();
    std::vector<EcgWindow> out;
    out.reserve(count);
    for (uint32_t i = 0; i < count; ++i) {
        EcgWindow win;
        win.samples.resize(static_cast<size_t>(kWindowSamples));
        for (auto& v : win.samples) v = static_cast<real>(r.f32());
        win.label = r.i16();
        win.sdnn_ms = static_cast<double>(r.f32());
        win.patient_id = r.str_u16();
        out.push_back(std::move(win));
    }
    if (!r.at_end()) throw parse_error("cpw1: trailing bytes in " + path);
    return out;
}

void write_label_names(const std::string& path, const std::vector<std::string>& names) {
    std::ostringstream os;
    for (const auto& n : names) os << n << "\n";
    write_file_text(path, os.str());
}

std::vector<std::string> read_label_names(const std::string& path) {
    std::istringstream is(read_file_text(path));
    std::vector<std::string> names;
    std::string line;
    while (std::getline(is, line))
        if (!line.empty()) names.push_back(line);
    return names;
}

}  // namespace cupid
