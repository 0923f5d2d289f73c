//! Seeded generator for PII-annotated fixture corpora in the ingestion
//! format. Values of all types are generated so that no value is a
//! substring of another, keeping the untrained-pool disjointness check
//! meaningful on small corpora.

use crate::seed::derive_rng;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_samples: usize,
    /// Multiplier on each type's base pool size.
    pub pool_scale: f64,
    /// Multiplier on each type's Zipf exponent.
    pub zipf_scale: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_samples: 400,
            pool_scale: 1.0,
            zipf_scale: 1.0,
            seed: 42,
        }
    }
}

pub const ENTITY_TYPES: [&str; 9] = [
    "FIRSTNAME",
    "LASTNAME",
    "CITY",
    "PHONE",
    "EMAIL",
    "STREET",
    "USERNAME",
    "ACCOUNT",
    "DATE",
];

/// Base pool size and Zipf exponent per type: names and cities repeat a lot,
/// phone and account numbers hardly at all.
const TYPE_PROFILES: [(&str, usize, f64); 9] = [
    ("FIRSTNAME", 80, 1.0),
    ("LASTNAME", 150, 0.8),
    ("CITY", 40, 1.1),
    ("PHONE", 400, 0.2),
    ("EMAIL", 300, 0.3),
    ("STREET", 300, 0.3),
    ("USERNAME", 250, 0.4),
    ("ACCOUNT", 400, 0.1),
    ("DATE", 200, 0.5),
];

fn profile(cfg: &SynthConfig, ty: &str) -> (usize, f64) {
    let &(_, size, zipf) = TYPE_PROFILES
        .iter()
        .find(|p| p.0 == ty)
        .expect("known type");
    (
        ((size as f64 * cfg.pool_scale).round() as usize).max(1),
        zipf * cfg.zipf_scale,
    )
}

/// Sentence frames: `{TYPE}` is a slot, `[a|b]` a seeded choice.
const PATTERNS: [&str; 40] = [
    "please [send|mail|forward|post] the final invoice [for|addressed to|meant for] {FIRSTNAME} {LASTNAME} [to|over to|across to] {EMAIL} [before|by|ahead of|prior to] the end of the month .",
    "the courier could not [reach|find|contact|locate] {FIRSTNAME} [at|on|through|via] {PHONE} [so|and so|which is why|hence] the parcel went back [to|towards|home to] {CITY} [.|today .|again .]",
    "our records show that {USERNAME} [changed|reset|updated|rotated] the password [on|early on|late on|sometime on] {DATE} [from|using|via|with] a device [in|near|around|outside] {CITY} [.|last year .|overnight .]",
    "a refund was issued to [account|card|wallet|ledger] {ACCOUNT} [held by|owned by|opened by|registered to] {FIRSTNAME} {LASTNAME} [last week|yesterday|on monday|this month] .",
    "the new tenant [at|of|renting|moving into] {STREET} [is|will be|turned out to be|was confirmed as] {FIRSTNAME} [and|while|whereas|but] the lease starts [on|from|after|around] {DATE} [.|sharp .|formally .]",
    "kindly [confirm|check|verify|tell us] that {EMAIL} [is|remains|stays|counts as] still the right contact for the order .",
    "when you [arrive in|land in|reach|get to] {CITY} [call|phone|dial|ring] {PHONE} [and|then|to|and then] ask for the front desk .",
    "the support ticket [opened by|raised by|filed by|logged by] {USERNAME} [mentions|describes|reports|cites] a delivery [to|for|bound for|addressed to] {STREET} [in|within|inside|near] {CITY} [.|yesterday .|twice .]",
    "we scheduled the interview [with|for|alongside] {FIRSTNAME} {LASTNAME} [on|for|early on|late on] {DATE} [at|inside|in] the main office .",
    "payments [from|out of|leaving|drawn on] {ACCOUNT} will be paused [until|till|up to|through] {DATE} [as requested|as agreed|for now|by request] .",
    "the school sent a letter [about|regarding|concerning|on behalf of] {FIRSTNAME} [to|towards|for] the family home [at|on|near] {STREET} [yesterday|this morning|last night|on friday] .",
    "please [forward|pass on|route|copy] the signed forms [from|sent by|received from|returned by] {EMAIL} [to|over to|onward to] the legal team today .",
    "the pharmacy [in|of|near|downtown] {CITY} [has|holds|keeps|prepared] a prescription ready [for|under|in the name of] {LASTNAME} [since|from|as of|dated] {DATE} [.|already .|now .]",
    "account holder {FIRSTNAME} [asked us|wants us|told us|requested us] to update the number [to|into|with] {PHONE} [right away|quickly|by tonight|this week] .",
    "during the audit we found logins [by|from user|made by|under] {USERNAME} [from|coming from|traced to|originating in] {CITY} [late at night|after hours|on weekends|before dawn] .",
    "the moving truck will [reach|stop at|arrive at|pull up at] {STREET} [around noon|by ten|after lunch|before dusk] and then drive [to|on to|over to|back to] {CITY} [.|slowly .|directly .]",
    "the bank flagged a transfer [from|out of|drawn on|sent from] {ACCOUNT} to a new payee [named|called|listed as|known as] {LASTNAME} [this morning|today|overnight|at noon] .",
    "reminder that the appointment [for|of|booked for|made for] {FIRSTNAME} {LASTNAME} [is set for|falls on|moved to|stays on] {DATE} [at nine|at ten|after lunch|in the evening] .",
    "send all future statements [to|over to|only to|directly to] {EMAIL} [instead of|rather than|not to] the postal address .",
    "the neighbour [at|from|living at|next to] {STREET} [reported|claimed|said|complained] that {PHONE} [keeps calling|rings|calls|texts] after midnight .",
    "our driver left the package [with|beside|for|in care of] {FIRSTNAME} [outside|behind|in front of|next to] {STREET} [before lunch|at dawn|after six|by noon] .",
    "a new library card was printed [for|under|in the name of] {LASTNAME} who was born [on|early on|late on] {DATE} [in|near|outside|just outside] {CITY} [.|long ago .|abroad .]",
    "security noticed that {USERNAME} [tried|attempted|managed|failed] to reset {EMAIL} [twice|three times|again|repeatedly] in one hour .",
    "the clinic moved the checkup [of|for|booked for] {FIRSTNAME} {LASTNAME} [from|away from|off] {DATE} [to|until|onto] next friday .",
    "direct debit [for|on|against|linked to] {ACCOUNT} bounced again [so|and so|hence|therefore] we wrote to {EMAIL} [about it|last night|this week|at once] .",
    "the hotel [in|near|outside|by the station in] {CITY} kept a spare room [for|reserved for|held for] {LASTNAME} [until|till|through|over] the weekend .",
    "text messages sent [to|over to|towards] {PHONE} [about|regarding|concerning|over] the overdue rent were never answered .",
    "the contractor working [on|along|near|beside] {STREET} asked {FIRSTNAME} [to|if they could|whether they would] move the car by tuesday .",
    "my cousin {FIRSTNAME} finally moved [from|out of|away from|all the way from] {CITY} [to|into|towards] a flat near the river .",
    "we traced the forum posts [signed|written by|posted by|sent by] {USERNAME} back to an office [in|near|outside|downtown in] {CITY} [last spring|in march|this year|long ago] .",
    "the loan [linked to|tied to|for|on] {ACCOUNT} was approved [on|early on|late on] {DATE} [after|following|thanks to] a short review .",
    "please [ring|call|phone|dial] {PHONE} [if|when|whenever|as soon as] the delivery [for|meant for|addressed to] {LASTNAME} [arrives|shows up|turns up|comes] damaged or late .",
    "the photo [of|showing|featuring] {FIRSTNAME} [from|taken at|snapped at] the reunion was emailed [to|over to|across to] {EMAIL} [by mistake|in error|too early|twice] .",
    "ticket holders like {USERNAME} can collect their passes [from|at|inside|behind] {STREET} [after six|before noon|on sunday|after work] .",
    "the insurance claim [from|filed by|lodged by|sent by] {LASTNAME} [lists|names|gives|cites] {STREET} [as|for|to be] the place of the accident .",
    "our newsletter bounced back [from|off|at] {EMAIL} [so|and so|hence|therefore] the address was removed last month .",
    "the tax office sent a reminder [to|for|addressed to] {FIRSTNAME} {LASTNAME} about account {ACCOUNT} [last year|in june|twice|again] .",
    "flights [from|out of|leaving|departing] {CITY} were cancelled [so|and so|hence|therefore] {FIRSTNAME} [stayed|remained|slept over] another night with friends .",
    "the gym membership [of|for|held by|owned by] {USERNAME} expired [on|early on|late on|sometime on] {DATE} [without|with no|lacking] any renewal notice .",
    "the plumber called {PHONE} [twice|three times|again|repeatedly] before anyone answered the door [at|of|on] {STREET} [today|this morning|at last|eventually] .",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

fn syllables(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .flat_map(|_| {
            [
                CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char,
                VOWELS[rng.random_range(0..VOWELS.len())] as char,
            ]
        })
        .collect()
}

fn title(s: &str) -> String {
    let mut c = s.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

fn digits(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n)
        .map(|_| char::from(b'0' + rng.random_range(0..10u8)))
        .collect()
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn make_value(ty: &str, rng: &mut ChaCha8Rng) -> String {
    match ty {
        "FIRSTNAME" => title(&syllables(rng, 3)),
        "LASTNAME" => {
            let end = pick(rng, &["son", "ard", "ini", "berg", "ova"]);
            title(&format!("{}{end}", syllables(rng, 2)))
        }
        "CITY" => {
            let end = pick(rng, &["ford", "ville", "mouth", "haven", "stead"]);
            title(&format!("{}{end}", syllables(rng, 2)))
        }
        "PHONE" => format!("{}-{}", digits(rng, 3), digits(rng, 4)),
        "EMAIL" => {
            let dom = pick(rng, &["mailbox.test", "post.example", "inbox.test"]);
            format!("{}.{}@{dom}", syllables(rng, 2), syllables(rng, 2))
        }
        "STREET" => {
            let kind = pick(rng, &["straat", "weg", "gasse", "vej"]);
            format!(
                "{}{kind} {}",
                title(&syllables(rng, 2)),
                rng.random_range(1..1000)
            )
        }
        "USERNAME" => format!("{}_{}", syllables(rng, 2), digits(rng, 2)),
        "ACCOUNT" => format!("AC{}", digits(rng, 8)),
        "DATE" => format!(
            "{:02}/{:02}/{}",
            rng.random_range(1..29),
            rng.random_range(1..13),
            rng.random_range(1950..2010)
        ),
        other => panic!("unknown synthetic type {other}"),
    }
}

/// Distinct values per type, none a substring of another.
fn value_pools(cfg: &SynthConfig) -> BTreeMap<&'static str, Vec<String>> {
    let mut all: Vec<String> = Vec::new();
    let mut pools = BTreeMap::new();
    for ty in ENTITY_TYPES {
        let mut rng = derive_rng(cfg.seed, &["synth-values", ty]);
        let size = profile(cfg, ty).0;
        let mut vals = Vec::with_capacity(size);
        let mut attempts = 0;
        while vals.len() < size && attempts < size * 1000 {
            attempts += 1;
            let v = make_value(ty, &mut rng);
            let clash = all.iter().any(|o| o.contains(&v) || v.contains(o.as_str()))
                || PATTERNS.iter().any(|p| p.contains(&v));
            if !clash {
                all.push(v.clone());
                vals.push(v);
            }
        }
        pools.insert(ty, vals);
    }
    pools
}

fn resolve_choices(frame: &str, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(frame.len());
    let mut rest = frame;
    while let Some(open) = rest.find('[') {
        let close = open + rest[open..].find(']').expect("balanced choice");
        out.push_str(&rest[..open]);
        let options: Vec<&str> = rest[open + 1..close].split('|').collect();
        out.push_str(options[rng.random_range(0..options.len())]);
        rest = &rest[close + 1..];
    }
    out.push_str(rest);
    out
}

/// Generate `n_samples` JSONL lines (`source_text` + `privacy_mask`).
pub fn generate(cfg: &SynthConfig) -> Vec<String> {
    let pools = value_pools(cfg);
    let mut rng = derive_rng(cfg.seed, &["synth-samples"]);
    let dists: BTreeMap<&str, WeightedIndex<f64>> = pools
        .iter()
        .map(|(&ty, vals)| {
            let zipf = profile(cfg, ty).1;
            let w = (0..vals.len()).map(|i| 1.0 / ((i + 1) as f64).powf(zipf));
            (ty, WeightedIndex::new(w).expect("non-empty pool"))
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let frame = PATTERNS[rng.random_range(0..PATTERNS.len())];
        let pattern = resolve_choices(frame, &mut rng);
        let mut rest = pattern.as_str();
        let mut text = String::new();
        let mut mask = Vec::new();
        while let Some(open) = rest.find('{') {
            let close = open + rest[open..].find('}').expect("balanced pattern");
            text.push_str(&rest[..open]);
            let ty = &rest[open + 1..close];
            let value = &pools[ty][dists[ty].sample(&mut rng)];
            let start = text.chars().count();
            text.push_str(value);
            mask.push(json!({
                "label": ty,
                "start": start,
                "end": start + value.chars().count(),
                "value": value,
            }));
            rest = &rest[close + 1..];
        }
        text.push_str(rest);
        out.push(json!({"source_text": text, "privacy_mask": mask}).to_string());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::ingest_reader;

    #[test]
    fn generated_lines_ingest_cleanly() {
        let cfg = SynthConfig {
            n_samples: 50,
            ..Default::default()
        };
        let lines = generate(&cfg);
        assert_eq!(lines, generate(&cfg));
        let samples = ingest_reader(lines.join("\n").as_bytes()).unwrap();
        assert_eq!(samples.len(), 50);
        assert!(samples.iter().all(|s| !s.spans.is_empty()));
    }

    #[test]
    fn pools_are_substring_free() {
        let pools = value_pools(&SynthConfig::default());
        let all: Vec<&String> = pools.values().flatten().collect();
        let expected: usize = TYPE_PROFILES.iter().map(|p| p.1).sum();
        assert_eq!(all.len(), expected);
        for (i, a) in all.iter().enumerate() {
            for b in &all[i + 1..] {
                assert!(
                    !a.contains(b.as_str()) && !b.contains(a.as_str()),
                    "{a} / {b}"
                );
            }
        }
    }
}
