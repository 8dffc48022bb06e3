//! Templated clinical-style notes with gold PII spans.
//!
//! The templates reproduce layouts that defeat sentence-based taggers:
//! identifiers and user names on their own lines below the cue that
//! explains them, tabulated `###/###` measurements next to short dates,
//! and surnames that are a patient in one place and a physician in another.
//! Local context is needed elsewhere too: invented names that are often out
//! of vocabulary, sentence-initial words that double as surnames, lab values
//! as long as record numbers, and dosage fractions shaped like dates.
//! Invented words open sentences as patients, doctors or drugs, and only
//! the words that follow tell which.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::document::{Document, EntitySpan};

pub const SYNTHETIC_LABELS: [&str; 7] = [
    "PATIENT", "DOCTOR", "DATE", "IDNUM", "USERNAME", "HOSPITAL", "PHONE",
];

const FIRST_NAMES: &[&str] = &[
    "John",
    "Mary",
    "Robert",
    "Linda",
    "James",
    "Patricia",
    "Michael",
    "Barbara",
    "William",
    "Elizabeth",
    "David",
    "Jennifer",
    "Richard",
    "Maria",
    "Joseph",
    "Susan",
    "Thomas",
    "Margaret",
    "Charles",
    "Dorothy",
    "Daniel",
    "Lisa",
    "Matthew",
    "Nancy",
    "Anthony",
    "Karen",
    "Mark",
    "Betty",
    "Donald",
    "Helen",
    "Steven",
    "Sandra",
    "Paul",
    "Donna",
    "Andrew",
    "Carol",
    "Joshua",
    "Ruth",
    "Kenneth",
    "Sharon",
    "Kevin",
    "Michelle",
    "Brian",
    "Laura",
    "George",
    "Sarah",
    "Edward",
    "Kimberly",
    "Ronald",
    "Deborah",
    "Timothy",
    "Jessica",
    "Jason",
    "Shirley",
    "Jeffrey",
    "Cynthia",
    "Ryan",
    "Angela",
    "Jacob",
    "Melissa",
    "Gary",
    "Brenda",
    "Nicholas",
    "Amy",
    "Eric",
    "Anna",
    "Stephen",
    "Rebecca",
    "Jonathan",
    "Virginia",
];

const LAST_NAMES: &[&str] = &[
    "Smith",
    "Johnson",
    "Williams",
    "Brown",
    "Jones",
    "Garcia",
    "Miller",
    "Davis",
    "Rodriguez",
    "Martinez",
    "Hernandez",
    "Lopez",
    "Gonzalez",
    "Wilson",
    "Anderson",
    "Thomas",
    "Taylor",
    "Moore",
    "Jackson",
    "Martin",
    "Lee",
    "Perez",
    "Thompson",
    "White",
    "Harris",
    "Sanchez",
    "Clark",
    "Ramirez",
    "Lewis",
    "Robinson",
    "Walker",
    "Young",
    "Allen",
    "King",
    "Wright",
    "Scott",
    "Torres",
    "Nguyen",
    "Hill",
    "Flores",
    "Green",
    "Adams",
    "Nelson",
    "Baker",
    "Hall",
    "Rivera",
    "Campbell",
    "Mitchell",
    "Carter",
    "Roberts",
    "Gomez",
    "Phillips",
    "Evans",
    "Turner",
    "Diaz",
    "Parker",
    "Cruz",
    "Edwards",
    "Collins",
    "Reyes",
    "Stewart",
    "Morris",
    "Morales",
    "Murphy",
    "Cook",
    "Rogers",
    "Gutierrez",
    "Ortiz",
    "Morgan",
    "Cooper",
    "Peterson",
    "Bailey",
    "Reed",
    "Kelly",
    "Howard",
    "Ramos",
    "Kim",
    "Cox",
    "Ward",
    "Richardson",
    "Watson",
    "Brooks",
    "Chavez",
    "Wood",
    "James",
    "Bennett",
    "Gray",
    "Mendoza",
    "Ruiz",
    "Hughes",
    "Price",
    "Alvarez",
    "Castillo",
    "Sanders",
    "Patel",
    "Myers",
    "Long",
    "Ross",
    "Foster",
    "Jimenez",
    "Powell",
    "Jenkins",
    "Perry",
    "Russell",
    "Sullivan",
    "Bell",
    "Coleman",
    "Butler",
    "Henderson",
    "Barnes",
    "Gonzales",
    "Fisher",
    "Vasquez",
    "Simmons",
    "Romero",
    "Jordan",
    "Patterson",
    "Alexander",
    "Hamilton",
    "Graham",
    "Reynolds",
    "Griffin",
    "Wallace",
    "Moreno",
    "West",
    "Cole",
    "Hayes",
    "Bryant",
    "Herrera",
    "Gibson",
    "Ellis",
    "Tran",
    "Medina",
    "Aguilar",
    "Stevens",
    "Murray",
    "Ford",
    "Castro",
    "Marshall",
    "Owens",
    "Harrison",
    "Fernandez",
];

const PLACES: &[&str] = &[
    "Riverside",
    "Lakeview",
    "Mercy",
    "Fairview",
    "Summit",
    "Highland",
    "Oakwood",
    "Brookside",
    "Valley",
    "Northshore",
    "Westfield",
    "Pinecrest",
    "Harbor",
    "Cedar",
    "Maple",
    "Greenfield",
    "Bayview",
    "Hillcrest",
    "Springfield",
    "Clearwater",
    "Redwood",
    "Stonebridge",
    "Meadowbrook",
    "Parkland",
    "Kingsley",
    "Ashford",
    "Belmont",
    "Crestwood",
    "Elmhurst",
    "Glendale",
];

const FACILITY_KINDS: &[&str] = &[
    "Hospital",
    "Medical Center",
    "General Hospital",
    "Clinic",
    "Regional Medical Center",
    "Memorial Hospital",
    "Health Center",
];

/// Syllables for invented names, which are often unseen in training.
const SYLLABLES: &[&str] = &[
    "ba", "ker", "lin", "dor", "mes", "tro", "vik", "san", "hol", "wen", "gar", "ris", "pel",
    "ton", "mar", "quez", "bri", "fen", "lo", "sky", "aru", "zel", "nor", "bek", "tal", "mi",
];

/// Non-PII sentences opening with a word that is also a surname.
const SURNAME_WORD_FILLERS: &[&str] = &[
    "Long standing history of hypertension.",
    "Green sputum noted on exam.",
    "Gray discoloration of the toes.",
    "Bell palsy considered but unlikely.",
    "Price of medications reviewed with family.",
    "Young adult sibling at bedside.",
    "Reed catheter placed without difficulty.",
    "Wood lamp exam negative.",
    "West wing transfer deferred.",
    "Hill climbing causes dyspnea.",
];

const FILLERS: &[&str] = &[
    "No acute distress.",
    "Continue current medications.",
    "Lungs clear to auscultation bilaterally.",
    "Abdomen soft, nontender, nondistended.",
    "Denies chest pain or shortness of breath.",
    "Started heparin 5000 units and enoxaparin 40 mg daily.",
    "Plan to repeat labs in the morning.",
    "Tolerating diet without nausea.",
    "Wound is clean and dry.",
    "Patient ambulating with assistance.",
];

/// Accumulates note text and character-offset annotations.
struct NoteBuilder<'a> {
    text: String,
    chars: usize,
    spans: Vec<(usize, usize, &'static str)>,
    labels: &'a [&'a str],
}

impl<'a> NoteBuilder<'a> {
    fn push(&mut self, s: &str) {
        self.text.push_str(s);
        self.chars += s.chars().count();
    }

    fn entity(&mut self, label: &'static str, s: &str) {
        let start = self.chars;
        self.push(s);
        if self.labels.contains(&label) {
            self.spans.push((start, self.chars, label));
        }
    }
}

fn pick<'s, R: Rng>(rng: &mut R, items: &[&'s str]) -> &'s str {
    items.choose(rng).copied().unwrap_or_default()
}

fn full_date<R: Rng>(rng: &mut R) -> String {
    let (y, m, d) = (
        rng.gen_range(2060..2100),
        rng.gen_range(1..=12),
        rng.gen_range(1..=28),
    );
    match rng.gen_range(0..4) {
        0 => format!("{y}-{m:02}-{d:02}"),
        1 => format!("{m:02}/{d:02}/{y}"),
        2 => format!("{m}/{d}/{}", y % 100),
        _ => format!("{m}/{d}"),
    }
}

fn short_date<R: Rng>(rng: &mut R) -> String {
    format!("{}/{}", rng.gen_range(1..=12), rng.gen_range(1..=28))
}

fn blood_pressure<R: Rng>(rng: &mut R) -> String {
    format!("{}/{}", rng.gen_range(90..=180), rng.gen_range(50..=110))
}

fn id_number<R: Rng>(rng: &mut R) -> String {
    let digits = rng.gen_range(6..=8);
    (0..digits)
        .map(|_| char::from(b'0' + rng.gen_range(0..10)))
        .collect()
}

fn phone<R: Rng>(rng: &mut R) -> String {
    let (a, b, c) = (
        rng.gen_range(200..1000),
        rng.gen_range(200..1000),
        rng.gen_range(0..10000),
    );
    if rng.gen_bool(0.5) {
        format!("({a}) {b}-{c:04}")
    } else {
        format!("{a}-{b}-{c:04}")
    }
}

fn username<R: Rng>(rng: &mut R, first: &str, last: &str) -> String {
    let mut u = String::new();
    u.push(first.chars().next().unwrap_or('x').to_ascii_lowercase());
    u.push_str(&last.to_lowercase());
    if rng.gen_bool(0.6) {
        u.push_str(&rng.gen_range(1..100).to_string());
    }
    u
}

fn hospital<R: Rng>(rng: &mut R) -> String {
    format!("{} {}", pick(rng, PLACES), pick(rng, FACILITY_KINDS))
}

fn invented_name<R: Rng>(rng: &mut R) -> String {
    let mut name: String = (0..rng.gen_range(2..=3))
        .map(|_| pick(rng, SYLLABLES))
        .collect();
    if let Some(first) = name.get_mut(0..1) {
        first.make_ascii_uppercase();
    }
    name
}

fn person<R: Rng>(rng: &mut R) -> (String, String) {
    let first = if rng.gen_bool(0.2) {
        invented_name(rng)
    } else {
        pick(rng, FIRST_NAMES).to_string()
    };
    let last = if rng.gen_bool(0.3) {
        invented_name(rng)
    } else {
        pick(rng, LAST_NAMES).to_string()
    };
    (first, last)
}

/// Numbers and fractions that resemble identifiers and dates but are not PII.
fn lookalike_segment<R: Rng>(rng: &mut R, b: &mut NoteBuilder<'_>) {
    match rng.gen_range(0..3) {
        0 => b.push(&format!(
            "Platelets {} on admission.",
            rng.gen_range(100_000..450_000)
        )),
        1 => b.push(&format!(
            "Take {} tablet at bedtime.",
            pick(rng, &["1/2", "1/4", "3/4", "1/3"])
        )),
        _ => b.push(pick(rng, SURNAME_WORD_FILLERS)),
    }
    b.push(if rng.gen_bool(0.5) { " " } else { "\n" });
}

const PATIENT_VERBS: &[&str] = &[
    "tolerated",
    "denies",
    "reports",
    "complains of",
    "endorses",
    "describes",
    "ambulated with",
    "refused",
    "requested",
    "slept through",
    "vomited after",
    "noticed",
    "recalls",
    "prefers",
    "tolerates",
    "declined",
    "wants",
    "fears",
    "awoke with",
    "remembers",
];

const PATIENT_OBJECTS: &[&str] = &[
    "the procedure",
    "mild nausea",
    "chest tightness",
    "his breakfast",
    "her medications",
    "the night",
    "worsening pain",
    "some dizziness",
    "the physical therapy session",
];

const DOCTOR_VERBS: &[&str] = &[
    "recommended",
    "performed",
    "reviewed",
    "ordered",
    "dictated",
    "interpreted",
    "consented",
    "supervised",
    "documented",
    "requested",
    "discussed",
    "adjusted",
    "prescribed",
    "examined",
    "approved",
    "signed",
    "read",
    "recommends",
    "deferred",
    "scheduled",
];

const DOCTOR_OBJECTS: &[&str] = &[
    "a repeat echocardiogram",
    "the bedside paracentesis",
    "the imaging with radiology",
    "blood cultures",
    "the discharge summary",
    "the biopsy results",
    "a stress test",
    "the insulin regimen",
    "the consult note",
];

const DRUG_PREDICATES: &[&str] = &[
    "was started at",
    "was held for",
    "dose increased to",
    "was discontinued after",
    "was restarted at",
    "was titrated to",
    "was tapered over",
    "was switched to",
    "was given",
    "levels were checked after",
    "was continued at",
    "infusion ran at",
    "was reduced to",
    "was added at",
    "was stopped after",
];

const DRUG_OBJECTS: &[&str] = &[
    "20 mg daily",
    "hypotension",
    "10 mg twice daily",
    "the rash resolved",
    "5 mg nightly",
    "two days",
    "the morning dose",
    "1 g every 8 hours",
    "a test dose",
];

const INTERJECTIONS: &[&str] = &[
    ", per nursing,",
    ", on recheck today,",
    ", as of this morning,",
    ", per the overnight team,",
    ", again,",
];

/// A sentence-initial invented word whose role only the words after it
/// reveal: patient, doctor, or a drug name built from the same syllables.
fn ambiguous_subject_segment<R: Rng>(
    rng: &mut R,
    b: &mut NoteBuilder<'_>,
    patient: &(String, String),
) {
    let role = rng.gen_range(0..3);
    match role {
        0 => b.entity("PATIENT", &patient.1),
        1 => b.entity("DOCTOR", &invented_name(rng)),
        _ => b.push(&invented_name(rng)),
    }
    if rng.gen_bool(0.5) {
        b.push(pick(rng, INTERJECTIONS));
    }
    let (verbs, objects) = match role {
        0 => (PATIENT_VERBS, PATIENT_OBJECTS),
        1 => (DOCTOR_VERBS, DOCTOR_OBJECTS),
        _ => (DRUG_PREDICATES, DRUG_OBJECTS),
    };
    b.push(&format!(" {} {}.", pick(rng, verbs), pick(rng, objects)));
    b.push(if rng.gen_bool(0.5) { " " } else { "\n" });
}

fn patient_segment<R: Rng>(rng: &mut R, b: &mut NoteBuilder<'_>, patient: &(String, String)) {
    let (first, last) = (patient.0.as_str(), patient.1.as_str());
    match rng.gen_range(0..4) {
        0 => {
            b.push("Patient: ");
            b.entity("PATIENT", &format!("{first} {last}"));
            b.push("\n");
        }
        1 => {
            b.entity("PATIENT", &format!("{first} {last}"));
            b.push(&format!(" is a {}-year-old ", rng.gen_range(20..95)));
            b.push(if rng.gen_bool(0.5) { "man" } else { "woman" });
            b.push(" admitted to ");
            b.entity("HOSPITAL", &hospital(rng));
            b.push(" on ");
            b.entity("DATE", &full_date(rng));
            b.push(".\n");
        }
        2 => {
            b.push(if rng.gen_bool(0.5) { "Mr. " } else { "Ms. " });
            b.entity("PATIENT", last);
            b.push(" was seen in clinic today.\n");
        }
        _ => {
            b.push("Name:\n");
            b.entity("PATIENT", &format!("{last}, {first}"));
            b.push("\n");
        }
    }
}

fn doctor_segment<R: Rng>(rng: &mut R, b: &mut NoteBuilder<'_>) {
    let (first, last) = person(rng);
    let (first, last) = (first.as_str(), last.as_str());
    match rng.gen_range(0..3) {
        0 => {
            b.push("Seen by Dr. ");
            b.entity("DOCTOR", &format!("{first} {last}"));
            b.push(" at ");
            b.entity("HOSPITAL", &hospital(rng));
            b.push(".\n");
        }
        1 => {
            b.push("Follow up with Dr. ");
            b.entity("DOCTOR", last);
            b.push(" in 2 weeks. Call ");
            b.entity("PHONE", &phone(rng));
            b.push(" with questions.\n");
        }
        _ => {
            b.push("Attending:\nDr. ");
            b.entity("DOCTOR", &format!("{first} {last}"));
            b.push("\n");
        }
    }
}

fn vitals_segment<R: Rng>(rng: &mut R, b: &mut NoteBuilder<'_>) {
    if rng.gen_bool(0.5) {
        b.push(&format!(
            "BP {} HR {} RR {} Temp 98.{}\n",
            blood_pressure(rng),
            rng.gen_range(55..110),
            rng.gen_range(12..24),
            rng.gen_range(0..10)
        ));
    } else {
        b.push("Date\tBP\tHR\n");
        for _ in 0..rng.gen_range(1..=2) {
            b.entity("DATE", &short_date(rng));
            b.push("\t");
            b.push(&blood_pressure(rng));
            b.push(&format!("\t{}\n", rng.gen_range(55..110)));
        }
    }
}

fn transfer_segment<R: Rng>(rng: &mut R, b: &mut NoteBuilder<'_>) {
    b.push("Transferred from ");
    b.entity("HOSPITAL", &hospital(rng));
    b.push(" on ");
    b.entity("DATE", &full_date(rng));
    b.push(". Contact number ");
    b.entity("PHONE", &phone(rng));
    b.push(".\n");
}

fn note<R: Rng>(rng: &mut R, labels: &[&str]) -> (String, Vec<(usize, usize, &'static str)>) {
    let mut b = NoteBuilder {
        text: String::new(),
        chars: 0,
        spans: Vec::new(),
        labels,
    };
    b.push("Record date: ");
    b.entity("DATE", &full_date(rng));
    b.push("\n");
    if rng.gen_bool(0.6) {
        b.push("MRN:\n");
    } else {
        b.push("MRN: ");
    }
    b.entity("IDNUM", &id_number(rng));
    b.push("\n\n");

    let patient = person(rng);
    let mut body: Vec<u8> = vec![0, 1, 2, 3, 4, 4, 5, 5, 6, 6];
    body.shuffle(rng);
    for seg in body.into_iter().take(rng.gen_range(6..=10)) {
        match seg {
            0 => patient_segment(rng, &mut b, &patient),
            1 => doctor_segment(rng, &mut b),
            2 => vitals_segment(rng, &mut b),
            3 => transfer_segment(rng, &mut b),
            5 => lookalike_segment(rng, &mut b),
            6 => ambiguous_subject_segment(rng, &mut b, &patient),
            _ => {
                b.push(pick(rng, FILLERS));
                b.push(if rng.gen_bool(0.5) { " " } else { "\n" });
            }
        }
    }
    let (df, dl) = person(rng);
    b.push("\nElectronically signed by:\n");
    b.entity("USERNAME", &username(rng, &df, &dl));
    b.push("\n");
    (b.text, b.spans)
}

/// `n_docs` deterministic synthetic notes annotated with every label in `labels`.
pub fn generate_with_labels(seed: u64, n_docs: usize, labels: &[&str]) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| {
            let (text, raw) = note(&mut rng, labels);
            let mut doc = Document::from_text(format!("synth-{seed}-{i:04}"), text);
            doc.gold_spans = raw
                .into_iter()
                .map(|(start, end, label)| {
                    let first = doc
                        .tokens
                        .iter()
                        .position(|t| t.start == start)
                        .expect("span start on a token");
                    let last = doc
                        .tokens
                        .iter()
                        .rposition(|t| t.end == end)
                        .expect("span end on a token");
                    EntitySpan::over(&doc.tokens, first, last, label)
                })
                .collect();
            doc
        })
        .collect()
}

/// Synthetic notes over the full label set.
pub fn generate_synthetic_corpus(seed: u64, n_docs: usize) -> Vec<Document> {
    generate_with_labels(seed, n_docs, &SYNTHETIC_LABELS)
}
