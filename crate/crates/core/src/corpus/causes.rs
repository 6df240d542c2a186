//! Stand-in inventory of 29 coarse cause types. Each type carries the verb
//! phrases that realize it inside carrier sentences and the cause-specific
//! sentences used in gold replies.

use super::EmotionLabel;

pub const CAUSE_TYPE_COUNT: usize = 29;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CauseType {
    pub name: String,
    pub label: EmotionLabel,
    pub phrases: Vec<String>,
    pub comments: Vec<String>,
}

fn cause(name: &str, label: EmotionLabel, phrases: &[&str], comments: &[&str]) -> CauseType {
    CauseType {
        name: name.to_string(),
        label,
        phrases: phrases.iter().map(|s| s.to_string()).collect(),
        comments: comments.iter().map(|s| s.to_string()).collect(),
    }
}

pub fn default_cause_inventory() -> Vec<CauseType> {
    use EmotionLabel::*;
    vec![
        cause("broken_up", Sad, &["broke up", "split up"],
            &["breaking up really hurts, did you argue about something?"]),
        cause("missing_someone", Sad, &["miss my family", "miss my grandma"],
            &["missing someone you love is hard, maybe give them a call?"]),
        cause("failed_exam", Sad, &["failed an exam", "failed my test"],
            &["one bad exam does not define you, you can study and try again."]),
        cause("lost_job", Sad, &["lost my job", "got fired"],
            &["losing a job is so stressful, you will find new work."]),
        cause("pet_loss", Sad, &["lost my dog", "lost my cat"],
            &["losing a pet is like losing a friend, they were lucky to have you."]),
        cause("illness", Sad, &["got sick", "caught a cold"],
            &["being sick is miserable, please rest and drink some water."]),
        cause("loneliness", Sad, &["have no friends", "feel alone at school"],
            &["feeling alone is painful, i am always here to chat with you."]),
        cause("family_conflict", Sad, &["fought with my parents", "argued with my mom"],
            &["fights with family hurt the most, maybe talk when things calm down."]),
        cause("bereavement", Sad, &["lost my grandpa", "went to a funeral"],
            &["i am so sorry for your loss, grief takes time."]),
        cause("relocation", Sad, &["moved to a new city", "changed schools"],
            &["a new place takes time to feel like home."]),
        cause("rejection", Sad, &["got rejected", "was turned down"],
            &["rejection stings, but it says nothing about your worth."]),
        cause("insomnia", Sad, &["cannot sleep", "stayed up all night"],
            &["no sleep makes everything harder, try to rest a little tonight."]),
        cause("betrayal", Anger, &["got cheated", "was lied to"],
            &["being lied to is a betrayal of trust, you deserve honesty."]),
        cause("workplace_conflict", Anger, &["got yelled at by my boss", "was criticized at work"],
            &["nobody deserves to be treated like that at work."]),
        cause("traffic", Anger, &["was stuck in traffic", "missed my bus"],
            &["traffic wastes so much time, at least you made it through."]),
        cause("noisy_neighbors", Anger, &["have noisy neighbors", "heard drilling all night"],
            &["noise at night is maddening, maybe talk to your neighbors."]),
        cause("theft", Anger, &["had my phone stolen", "got robbed"],
            &["having your things stolen feels awful, did you report it?"]),
        cause("being_ignored", Anger, &["was ignored by my friends", "got left out"],
            &["being left out is frustrating, your feelings matter."]),
        cause("overcharged", Anger, &["was overcharged at the store", "got scammed online"],
            &["paying too much is infuriating, ask for a refund."]),
        cause("game_loss", Anger, &["lost the game again", "lost every match"],
            &["losing streaks are frustrating, take a break and play later."]),
        cause("unfair_blame", Anger, &["was blamed for nothing", "got punished unfairly"],
            &["being blamed unfairly is so frustrating, you can explain your side."]),
        cause("promotion", Joy, &["got promoted", "got a raise"],
            &["a promotion is a big deal, your hard work paid off."]),
        cause("passed_exam", Joy, &["passed the exam", "aced my test"],
            &["passing the exam shows how hard you studied, well done."]),
        cause("new_pet", Joy, &["got a puppy", "adopted a kitten"],
            &["a new pet brings so much joy, what is its name?"]),
        cause("vacation", Joy, &["am going on vacation", "booked a trip"],
            &["a trip sounds amazing, where are you going?"]),
        cause("birthday", Joy, &["had a great birthday", "got a surprise party"],
            &["happy birthday, i hope you got lots of cake."]),
        cause("new_relationship", Joy, &["found a girlfriend", "started dating someone"],
            &["love is wonderful, i hope you two are very happy."]),
        cause("winning", Joy, &["won a prize", "won the lottery"],
            &["winning is so exciting, congratulations on your luck."]),
        cause("reunion", Joy, &["saw my old friends", "visited my hometown"],
            &["old friends are precious, it is great you got to see them."]),
    ]
}
