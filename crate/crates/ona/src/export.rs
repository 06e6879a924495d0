//! Graph export. Node size follows how often a code occurred; edge width
//! follows weight relative to the heaviest edge of the graph.

use std::fmt::Write;

use crate::network::OnaNetwork;
use crate::registry::CodeRegistry;

/// (ground, response, relative weight) for every non-zero edge.
pub fn relative_edges(net: &OnaNetwork) -> Vec<(usize, usize, f64)> {
    let max = net.adjacency.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Vec::new();
    }
    let k = net.codes;
    (0..k * k).filter(|&i| net.adjacency[i] > 0.0).map(|i| (i / k, i % k, net.adjacency[i] / max)).collect()
}

fn node_scale(net: &OnaNetwork) -> Vec<f64> {
    let max = net.code_counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    net.code_counts.iter().map(|&c| c as f64 / max).collect()
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

pub fn to_dot(net: &OnaNetwork, registry: &CodeRegistry) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "digraph \"{}\" {{", escape(&net.unit_id));
    let _ = writeln!(out, "  node [shape=circle, fixedsize=true];");
    for (i, scale) in node_scale(net).iter().enumerate() {
        let width = 0.3 + 1.2 * scale;
        let _ = writeln!(
            out,
            "  n{i} [label=\"{}\", width={width:.3}, xlabel=\"{}\"];",
            escape(registry.name(i)),
            net.code_counts[i]
        );
    }
    for (g, r, w) in relative_edges(net) {
        let _ = writeln!(out, "  n{g} -> n{r} [penwidth={:.3}, weight={:.4}];", 0.5 + 5.5 * w, w);
    }
    out.push_str("}\n");
    out
}

/// Codes on a circle; self-pairs drawn as small loops.
pub fn to_svg(net: &OnaNetwork, registry: &CodeRegistry) -> String {
    const SIZE: f64 = 640.0;
    let k = net.codes.max(1);
    let (cx, cy, ring) = (SIZE / 2.0, SIZE / 2.0, SIZE * 0.36);
    let pos: Vec<(f64, f64)> = (0..k)
        .map(|i| {
            let a = std::f64::consts::TAU * i as f64 / k as f64 - std::f64::consts::FRAC_PI_2;
            (cx + ring * a.cos(), cy + ring * a.sin())
        })
        .collect();
    let scale = node_scale(net);
    let radius: Vec<f64> = scale.iter().map(|s| 6.0 + 22.0 * s).collect();
    let mut out = String::new();
    let _ = writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#);
    out.push_str(r##"<defs><marker id="arrow" viewBox="0 0 10 10" refX="10" refY="5" markerWidth="5" markerHeight="5" orient="auto-start-reverse"><path d="M0,0 L10,5 L0,10 z" fill="#555"/></marker></defs>"##);
    out.push('\n');
    for (g, r, w) in relative_edges(net) {
        let width = 0.5 + 7.5 * w;
        if g == r {
            let (x, y) = pos[g];
            let rr = radius[g];
            let _ = writeln!(
                out,
                r##"<path d="M{:.1},{:.1} a{rr:.1},{rr:.1} 0 1,1 {:.1},0" fill="none" stroke="#555" stroke-opacity="0.7" stroke-width="{width:.2}"/>"##,
                x - rr * 0.6,
                y - rr,
                rr * 1.2
            );
            continue;
        }
        let ((x1, y1), (x2, y2)) = (pos[g], pos[r]);
        let (dx, dy) = (x2 - x1, y2 - y1);
        let len = (dx * dx + dy * dy).sqrt().max(1e-9);
        let (ux, uy) = (dx / len, dy / len);
        // Offset sideways so that A->B and B->A do not overlap.
        let (ox, oy) = (-uy * 4.0, ux * 4.0);
        let _ = writeln!(
            out,
            r##"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#555" stroke-opacity="0.7" stroke-width="{width:.2}" marker-end="url(#arrow)"/>"##,
            x1 + ux * radius[g] + ox,
            y1 + uy * radius[g] + oy,
            x2 - ux * radius[r] + ox,
            y2 - uy * radius[r] + oy
        );
    }
    for i in 0..net.codes {
        let (x, y) = pos[i];
        let _ = writeln!(
            out,
            r##"<circle cx="{x:.1}" cy="{y:.1}" r="{:.1}" fill="#4a7ab5" fill-opacity="0.85"><title>{} ({})</title></circle>"##,
            radius[i],
            registry.name(i),
            net.code_counts[i]
        );
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            y + radius[i] + 13.0,
            registry.name(i)
        );
    }
    out.push_str("</svg>\n");
    out
}
