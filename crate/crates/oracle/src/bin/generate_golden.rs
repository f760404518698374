//! Writes the reference outputs for a demo dataset.
//!
//! Usage: `generate-golden <dataset-dir> [<out-dir>]`. The dataset directory
//! holds `kb.json`, `suffix_rules.dat`, `web.jsonl`, `mobile.jsonl`,
//! `scenarios.jsonl` and `pairs.csv`; output goes to `<dataset-dir>/golden`
//! unless another directory is given.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;
use trackmarket_oracle::*;

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name))
        .unwrap_or_else(|e| panic!("{}: {e}", dir.join(name).display()))
}

fn jsonl(text: &str) -> Vec<Value> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("json line"))
        .collect()
}

fn strings(v: &Value, key: &str) -> Vec<String> {
    v.get(key)
        .and_then(Value::as_array)
        .map(|a| {
            a.iter()
                .map(|s| s.as_str().expect("string").to_string())
                .collect()
        })
        .unwrap_or_default()
}

fn text(v: &Value, key: &str) -> String {
    v[key].as_str().expect(key).to_string()
}

fn entities(doc: &str) -> Vec<Entity> {
    let doc: Value = serde_json::from_str(doc).expect("kb json");
    doc["entities"]
        .as_array()
        .expect("entities")
        .iter()
        .map(|e| Entity {
            id: text(e, "entity_id"),
            name: e
                .get("display_name")
                .and_then(Value::as_str)
                .map_or_else(|| text(e, "entity_id"), str::to_string),
            parent: e
                .get("parent_id")
                .and_then(Value::as_str)
                .map(str::to_string),
            is_tracker: e["is_tracker"].as_bool().expect("is_tracker"),
            domains: strings(e, "domains"),
            prefixes: strings(e, "library_prefixes"),
        })
        .collect()
}

fn observations(sites: &[Site], platform: &str) -> String {
    let mut out = String::new();
    for s in sites {
        let list = |v: &[String]| serde_json::to_string(v).expect("strings");
        writeln!(
            out,
            "{{\"first_party_id\":{},\"platform\":\"{platform}\",\"rank\":{},\"third_party_hosts\":{},\"third_party_libraries\":{}}}",
            serde_json::to_string(&s.id).expect("string"),
            s.rank,
            list(&s.hosts),
            list(&s.libraries)
        )
        .unwrap();
    }
    out
}

fn metrics_csv(rows: &[Row], kb: &[Entity]) -> String {
    let mut out = String::from(
        "entity_id,display_name,prevalence,prominence,ish,prowish,prevalence_rank,prominence_rank,rank_change\n",
    );
    for r in rows {
        let name = &kb
            .iter()
            .find(|e| e.id == r.entity)
            .expect("known entity")
            .name;
        writeln!(
            out,
            "{},{name},{},{},{},{},{},{},{}",
            r.entity,
            r.prevalence,
            sig(&r.prominence),
            sig(&r.ish),
            sig(&r.prowish),
            r.prevalence_rank,
            r.prominence_rank,
            r.rank_change
        )
        .unwrap();
    }
    out
}

fn grid_cells(h: &Q) -> String {
    format!(
        "{},{},{},{}",
        sig(h),
        classification(h),
        eu_flag(h),
        us_flag(h)
    )
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let dir = PathBuf::from(
        args.first()
            .expect("usage: generate-golden <dataset-dir> [<out-dir>]"),
    );
    let out_dir = args
        .get(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| dir.join("golden"));
    fs::create_dir_all(&out_dir).expect("create output directory");
    let write =
        |name: &str, body: &str| fs::write(out_dir.join(name), body).expect("write golden file");

    let rules = parse_rules(&read(&dir, "suffix_rules.dat"));
    let kb = entities(&read(&dir, "kb.json"));
    let web: Vec<Site> = jsonl(&read(&dir, "web.jsonl"))
        .iter()
        .map(|r| {
            ingest_web(
                &text(r, "site_identifier"),
                r["rank"].as_u64().unwrap() as u32,
                &strings(r, "request_hosts"),
                &rules,
            )
        })
        .collect();
    let mobile: Vec<Site> = jsonl(&read(&dir, "mobile.jsonl"))
        .iter()
        .map(|r| {
            ingest_app(
                &text(r, "package_name"),
                r["rank"].as_u64().unwrap() as u32,
                &strings(r, "library_packages"),
                &strings(r, "url_strings"),
                &rules,
            )
        })
        .collect();
    write("web.obs.jsonl", &observations(&web, "web"));
    write("mobile.obs.jsonl", &observations(&mobile, "mobile"));

    let market = Market {
        entities: &kb,
        stage: Stage::Consolidated,
        min_fraction: decimal("0.005"),
    };
    let mut grid = String::from(
        "market,level,ish_hhi,ish_classification,ish_eu_flag,ish_us_flag,prowish_hhi,prowish_classification,prowish_eu_flag,prowish_us_flag\n",
    );
    let mut combined_rows = Vec::new();
    for (platform, sites) in [("web", &web), ("mobile", &mobile)] {
        for level in [Level::Subsidiary, Level::Parent] {
            let rows = market.rows(sites, level, &[]);
            write(
                &format!("metrics_{platform}_{}.csv", level.name()),
                &metrics_csv(&rows, &kb),
            );
            writeln!(
                grid,
                "{platform},{},{},{}",
                level.name(),
                grid_cells(&table_hhi(&rows, Weight::Ish)),
                grid_cells(&table_hhi(&rows, Weight::Prowish))
            )
            .unwrap();
        }
    }
    for level in [Level::Subsidiary, Level::Parent] {
        let (ish, prowish) = combined_shares(
            &market.rows(&web, level, &[]),
            &market.rows(&mobile, level, &[]),
        );
        combined_rows.push(format!(
            "combined,{},{},{}\n",
            level.name(),
            grid_cells(&hhi(ish.values())),
            grid_cells(&hhi(prowish.values()))
        ));
    }
    grid.extend(combined_rows);
    write("hhi.csv", &grid);

    let mut scenarios = String::from(
        "parent_id,subsidiary_ids,platform,weight,hhi_actual,hhi_counterfactual,delta,eu_concern\n",
    );
    for s in jsonl(&read(&dir, "scenarios.jsonl")) {
        let parent = text(&s, "parent_id");
        let subs = strings(&s, "subsidiary_ids");
        let severed: Vec<&str> = subs.iter().map(String::as_str).collect();
        let scope = text(&s, "platform");
        for weight in [Weight::Ish, Weight::Prowish] {
            let h = |cut: &[&str]| match scope.as_str() {
                "web" => market.parent_hhi(&web, weight, cut),
                "mobile" => market.parent_hhi(&mobile, weight, cut),
                _ => market.combined_parent_hhi(&web, &mobile, weight, cut),
            };
            let (actual, counterfactual, delta) = demerger(h(&[]), h(&severed));
            writeln!(
                scenarios,
                "{parent},{},{scope},{},{},{},{},{}",
                subs.join(";"),
                weight.name(),
                sig(&actual),
                sig(&counterfactual),
                sig(&delta),
                eu_concern(&actual, &delta)
            )
            .unwrap();
        }
    }
    write("scenarios.csv", &scenarios);

    // Overlap at parent level, no coverage threshold.
    let web_edges = lift(&subsidiary_edges(&web, &kb), &kb, &[]);
    let mobile_edges = lift(&subsidiary_edges(&mobile, &kb), &kb, &[]);
    let mut overlap = String::from(
        "web_first_party_id,mobile_first_party_id,provenance,intersection,union,rate\n",
    );
    let mut rates = Vec::new();
    let mut excluded = 0;
    for line in read(&dir, "pairs.csv")
        .lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
    {
        let (w, m) = line.split_once(',').expect("two columns");
        let (w, m) = (w.trim(), m.trim());
        let (inter, union, rate) =
            jaccard(&entity_set(&web_edges, w), &entity_set(&mobile_edges, m));
        writeln!(
            overlap,
            "{w},{m},curated,{inter},{union},{}",
            rate.as_ref().map(sig).unwrap_or_default()
        )
        .unwrap();
        match rate {
            Some(r) => rates.push(r),
            None => excluded += 1,
        }
    }
    writeln!(
        overlap,
        "mean,,parent,,excluded={excluded},{}",
        mean(&rates).as_ref().map(sig).unwrap_or_default()
    )
    .unwrap();
    write("overlap.csv", &overlap);

    // Heuristic pairs: package name reversed onto a web registrable domain.
    let mut proposed = BTreeSet::new();
    for app in &mobile {
        let labels: Vec<&str> = app.id.split('.').collect();
        let candidate = format!("{}.{}", labels[1], labels[0]).to_ascii_lowercase();
        for site in web
            .iter()
            .filter(|s| registrable_domain(&s.id, &rules) == candidate)
        {
            proposed.insert((site.id.clone(), app.id.clone()));
        }
    }
    let mut pairs = String::from("web_first_party_id,mobile_first_party_id,provenance\n");
    for (w, m) in proposed {
        writeln!(pairs, "{w},{m},heuristic").unwrap();
    }
    write("pairs_proposed.csv", &pairs);
}
