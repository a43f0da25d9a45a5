use std::fmt::Write;

use crate::anonymizer::AnonymizedDocument;
use crate::taxonomy::Category;

use super::{PromptMode, PromptSpec};

pub const DEFINITIONS_HEADER: &str = "Category definitions:";
pub const OUTPUT_HEADER: &str = "Output format:";
pub const EXAMPLES_HEADER: &str = "Examples:";
pub const TARGET_HEADER: &str = "### Text to label";

/// Renders the prompt for one document.
///
/// Layout: preamble, the sixteen category definitions, the output contract,
/// the exemplar blocks (few-shot only, in spec order), then the document.
/// The same inputs always produce the same string.
pub fn build_prompt(doc: &AnonymizedDocument, spec: &PromptSpec) -> String {
    let mut p = String::new();
    writeln!(p, "Instruction version: {}", spec.instruction_version).unwrap();
    p.push_str(
        "You annotate public text about people experiencing homelessness. \
         Decide which of the categories below apply to the text. A text may \
         belong to any number of categories, including none.\n\n",
    );
    p.push_str(DEFINITIONS_HEADER);
    p.push('\n');
    for c in Category::ALL {
        writeln!(p, "- {}: {}", c.id(), c.guideline()).unwrap();
    }
    p.push('\n');
    p.push_str(OUTPUT_HEADER);
    p.push_str(
        " reply with exactly one JSON object whose keys are all sixteen \
         identifiers from the definitions above, in the same order, each mapped \
         to true or false. Write nothing before or after the object.\n\n",
    );
    if spec.mode == PromptMode::FewShot {
        p.push_str(EXAMPLES_HEADER);
        p.push('\n');
        for (i, ex) in spec.exemplars.iter().enumerate() {
            writeln!(p, "### Example {} (source: {})", i + 1, ex.source).unwrap();
            writeln!(p, "Text: {}", one_line(&ex.text)).unwrap();
            writeln!(p, "Answer: {}", ex.labels.to_json_object()).unwrap();
            p.push('\n');
        }
    }
    p.push_str(TARGET_HEADER);
    p.push('\n');
    writeln!(p, "Text: {}", one_line(&doc.masked_text)).unwrap();
    p.push_str("Answer:");
    p
}

fn one_line(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::Exemplar;
    use crate::corpus::SourceKind;
    use crate::taxonomy::LabelVector;

    fn doc() -> AnonymizedDocument {
        AnonymizedDocument {
            doc_id: "d1".into(),
            masked_text: "PERSON0 says the\nshelter is full".into(),
            entity_map: vec![],
        }
    }

    fn few_spec() -> PromptSpec {
        let sources = [
            SourceKind::Reddit,
            SourceKind::X,
            SourceKind::News,
            SourceKind::Council,
            SourceKind::Reddit,
        ];
        let exemplars = sources
            .iter()
            .enumerate()
            .map(|(i, s)| Exemplar {
                doc_id: format!("ex{i}"),
                source: *s,
                text: format!("exemplar text {i}"),
                labels: LabelVector::from_bits(1 << i),
            })
            .collect();
        PromptSpec::few_shot("v1", exemplars)
    }

    fn definitions_section(prompt: &str) -> &str {
        let start = prompt.find(DEFINITIONS_HEADER).unwrap();
        let end = prompt.find(OUTPUT_HEADER).unwrap();
        &prompt[start..end]
    }

    #[test]
    fn zero_shot_lists_every_category_once() {
        let p = build_prompt(&doc(), &PromptSpec::zero_shot("v1"));
        let defs = definitions_section(&p);
        for c in Category::ALL {
            assert_eq!(defs.matches(c.id()).count(), 1, "{}", c.id());
        }
        assert!(!p.contains(EXAMPLES_HEADER));
        assert!(p.contains("PERSON0 says the shelter is full"));
        assert!(p.contains("JSON object"));
    }

    #[test]
    fn few_shot_has_five_ordered_blocks_before_document() {
        let p = build_prompt(&doc(), &few_spec());
        assert_eq!(p.matches("### Example ").count(), 5);
        let target = p.find(TARGET_HEADER).unwrap();
        let mut last = 0;
        for i in 0..5 {
            let at = p.find(&format!("exemplar text {i}")).unwrap();
            assert!(at > last && at < target);
            last = at;
        }
        let defs = definitions_section(&p);
        for c in Category::ALL {
            assert_eq!(defs.matches(c.id()).count(), 1);
        }
    }

    #[test]
    fn prompts_are_deterministic() {
        let spec = few_spec();
        assert_eq!(build_prompt(&doc(), &spec), build_prompt(&doc(), &spec));
        let z = PromptSpec::zero_shot("v1");
        assert_eq!(build_prompt(&doc(), &z), build_prompt(&doc(), &z));
    }
}
