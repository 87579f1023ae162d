#include "nodulefuse/xml.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <string>

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>

#include "nodulefuse/errors.hpp"

namespace nf {

namespace {

namespace pt = boost::property_tree;

std::string trimmed(std::string s) {
    const auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    s.erase(s.begin(), std::find_if_not(s.begin(), s.end(), is_space));
    s.erase(std::find_if_not(s.rbegin(), s.rend(), is_space).base(), s.end());
    return s;
}

int parse_int_field(const pt::ptree& node, const char* context) {
    const std::string raw = trimmed(node.get_value<std::string>());
    try {
        std::size_t pos = 0;
        const int v = std::stoi(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string(context) + " is not an integer: '" + raw + "'");
    }
}

double parse_double_field(const pt::ptree& node, const char* context) {
    const std::string raw = trimmed(node.get_value<std::string>());
    try {
        std::size_t pos = 0;
        const double v = std::stod(raw, &pos);
        if (pos != raw.size()) throw std::invalid_argument("trailing characters");
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string(context) + " is not a number: '" + raw + "'");
    }
}

bool parse_bool_field(const pt::ptree& node, const char* context) {
    std::string raw = trimmed(node.get_value<std::string>());
    std::transform(raw.begin(), raw.end(), raw.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (raw == "TRUE") return true;
    if (raw == "FALSE") return false;
    throw DataError(std::string(context) + " is not TRUE/FALSE: '" + raw + "'");
}

// XML element names for the 8 biomarkers, in canonical feature order.
constexpr const char* kCharacteristicTags[kBiomarkerCount] = {
    "subtlety",   "internalStructure", "calcification", "sphericity",
    "margin",     "lobulation",        "spiculation",   "texture"};

} // namespace

ParseResult parse_annotation_xml(const std::string& document) {
    pt::ptree tree;
    try {
        std::istringstream in(document);
        pt::read_xml(in, tree);
    } catch (const pt::xml_parser_error& e) {
        throw DataError("XML parse error at line " + std::to_string(e.line()) + ": " + e.message());
    }

    // Exactly one root element; <?xml?> declarations do not appear as keys.
    if (tree.size() != 1)
        throw DataError("expected a single root element");
    const std::string root_name = tree.front().first;
    if (root_name != "LidcReadMessage")
        throw UnsupportedSchemaError("unsupported annotation schema: root element '" + root_name + "'");
    const pt::ptree& root = tree.front().second;

    std::string patient_id = "unknown";
    if (const auto header = root.get_child_optional("ResponseHeader")) {
        for (const char* tag : {"PatientID", "SeriesInstanceUid", "StudyInstanceUID"}) {
            if (auto v = header->get_optional<std::string>(tag)) {
                patient_id = trimmed(*v);
                break;
            }
        }
    }

    ParseResult result;
    for (const auto& [session_name, session] : root) {
        if (session_name != "readingSession") continue;
        for (const auto& [read_name, nodule] : session) {
            if (read_name != "unblindedReadNodule") continue;
            const std::string nodule_id = trimmed(nodule.get<std::string>("noduleID", "?"));

            const auto characteristics = nodule.get_child_optional("characteristics");
            bool complete = characteristics.has_value();
            if (complete) {
                for (const char* tag : kCharacteristicTags)
                    complete = complete && characteristics->get_child_optional(tag).has_value();
                complete = complete && characteristics->get_child_optional("malignancy").has_value();
            }
            if (!complete) {
                ++result.skipped;
                continue;
            }

            Annotation ann;
            ann.patient_id = patient_id;
            for (std::size_t i = 0; i < kBiomarkerCount; ++i) {
                const std::string ctx = "nodule " + nodule_id + ": characteristic '" +
                                        kCharacteristicTags[i] + "'";
                ann.biomarkers[i] = parse_int_field(characteristics->get_child(kCharacteristicTags[i]),
                                                    ctx.c_str());
            }
            ann.malignancy.value = parse_int_field(characteristics->get_child("malignancy"),
                                                   ("nodule " + nodule_id + ": malignancy").c_str());

            for (const auto& [roi_name, roi] : nodule) {
                if (roi_name != "roi") continue;
                AnnotationContour contour;
                const auto zpos = roi.get_child_optional("imageZposition");
                if (!zpos) throw DataError("nodule " + nodule_id + ": roi without imageZposition");
                contour.z_position = parse_double_field(*zpos,
                                                        ("nodule " + nodule_id + ": imageZposition").c_str());
                if (const auto inc = roi.get_child_optional("inclusion"))
                    contour.inclusion = parse_bool_field(*inc, ("nodule " + nodule_id + ": inclusion").c_str());
                for (const auto& [edge_name, edge] : roi) {
                    if (edge_name != "edgeMap") continue;
                    const auto xc = edge.get_child_optional("xCoord");
                    const auto yc = edge.get_child_optional("yCoord");
                    if (!xc || !yc) throw DataError("nodule " + nodule_id + ": edgeMap without xCoord/yCoord");
                    contour.edge_points.emplace_back(
                        parse_int_field(*xc, ("nodule " + nodule_id + ": xCoord").c_str()),
                        parse_int_field(*yc, ("nodule " + nodule_id + ": yCoord").c_str()));
                }
                if (contour.edge_points.empty())
                    throw DataError("nodule " + nodule_id + ": roi without edge points");
                ann.contours.push_back(std::move(contour));
            }
            result.annotations.push_back(std::move(ann));
        }
    }
    return result;
}

} // namespace nf
