#!/usr/bin/env python3
"""Regenerate the bundled data fixtures: pronunciation lexicon, entity
catalogs, and carrier-phrase templates.

The lexicon mixes hand-curated ARPAbet entries (function words, irregular
words, and a few well-known place names) with rule-generated pronunciations
for the regular remainder. Entities are composed from the seed lists below;
every word that can appear in a reference or a simulated ASR output is
guaranteed a lexicon entry.

Usage: python3 tools/gen_fixtures.py [--out data]
"""

import argparse
import random
from pathlib import Path

# ---------------------------------------------------------------- seed lists

FIRST_NAMES = """
aaron abigail adam adrian aiden alan albert alexa alexander alice amanda amber
amelia amy andrea andrew angela anna anthony april arthur ashley austin barbara
benjamin bernard beth betty beverly blake bonnie bradley brandon brenda brian
brittany bruce bryan caleb cameron carl carla carlos carol caroline carrie
catherine chad charles charlotte chelsea cheryl chris christian christina
christopher cindy claire clara clarence claude colin connie connor craig
crystal cynthia dale daniel danielle danny darlene david dawn dean deborah
debra dennis derek diana diane dolores donald donna doris dorothy douglas
dustin dylan earl edward eleanor elena elijah elizabeth ellen emily emma eric
erica erin ethan eugene evelyn felix fiona frances francis frank franklin fred
gabriel gail garrett gary gavin george gerald gina glen gloria gordon grace
graham grant gregory hannah harold harry harvey hazel heather helen henry
holly howard hugh ian irene isaac isabella jack jacob jacqueline james jamie
jane janet janice janie jared jason jasper jean jeffrey jennifer jeremy jerome
jerry jesse jessica joan joanna joel john jonathan jordan joseph joshua joyce
juan judith julia julian julie justin karen katherine kathleen kathryn keith
kelly kenneth kevin kimberly kyle larry laura lauren lawrence leah leonard
leslie lillian linda lisa logan lois louis louise lucas lucille lucy luke
lydia lynn madison marcus margaret maria marie marilyn marion mark martha
martin marvin mary mason matthew maurice megan melanie melissa michael
michelle mildred miranda molly monica morgan nancy naomi natalie nathan
nicholas nicole noah nora norman oliver olivia oscar owen pamela patricia
patrick paul paula pauline pearl peter philip phillip phoebe phyllis rachel
ralph randall raymond rebecca regina reginald renee rhonda richard riley rita
robert roberta robin rodney roger ronald rosa rose ross roy russell ruth ryan
sally samantha samuel sandra sarah scott sean sharon sheila shirley sidney
simon sophia spencer stanley stella stephanie stephen steven stuart susan
sydney sylvia tamara tanya teresa terrence theodore theresa thomas timothy
tina todd tracy travis trevor tyler valerie vanessa vera vernon victor
victoria vincent violet virginia vivian walter wanda warren wayne wendy
wesley william willie winifred zachary zoe
""".split()

LAST_NAMES = """
abbott acker adams adkins aguilar albright alexander allen allison alvarez
anderson andrews archer armstrong arnold ashford atkins atkinson austin avery
bailey baker baldwin ballard banks barber barker barlow barnes barnett barrett
barron barton bass bates bauer baxter beasley becker bell bennett benson
bentley berg berger bishop black blackburn blair blake bolton bond booker
boone booth bowen bowers bowman boyd boyle bradford bradley bradshaw brady
branch brandt brennan brewer bridges briggs brock brooks brown browning bryan
bryant buchanan buck buckley bullock burch burdick burgess burke burnett burns
burton bush butler byers byrd cain caldwell calhoun callahan cameron campbell
cannon cantrell carey carlson carpenter carr carroll carson carter case casey
castillo castro chambers chandler chapman chase chavez cherry christensen
church clark clarke clay clayton clements cline cobb cochran coffey cohen cole
coleman collier collins colon combs compton conley conner conrad conway cook
cooke cooley cooper copeland corbett cortez costello cotton cox craft craig
crane crawford crosby cross crowe cruz cummings cunningham curry curtis dalton
daniel daniels daugherty davenport david davidson davies davis dawson day dean
decker delacruz delaney delgado dennis dickerson dickson dillard dillon dixon
dodson donaldson donovan dorsey dotson douglas downs doyle drake driscoll dudley
duffy duke duncan dunlap dunn duran durham dyer eaton edwards elliott ellis
emerson england english erickson espinoza estes evans everett ewing farley
farmer farrell faulkner ferguson fernandez field fields finch finley fischer
fisher fitzgerald fitzpatrick fleming fletcher flores flowers floyd flynn foley
forbes ford foreman foster fowler fox francis franco frank franklin frazier
freeman french frost fry frye fuentes fuller fulton gaines gallagher gallegos
galloway gamble garcia gardner garner garrett garrison garza gates gay gentry
george gibbs gibson gilbert gill gillespie gilliam gilmore glass glenn glover
goff golden gomez gonzales gonzalez goodman goodwin gordon gould grady graham
grant graves gray green greene greer gregory griffin griffith grimes gross
guerra guerrero guthrie gutierrez guzman hale haley hall hamilton hammond
hampton hancock haney hansen hanson hardin harding hardy harmon harper harrell
harrington harris harrison hart hartman harvey hatfield hawkins hayden hayes
haynes head heath hebert henderson hendricks hendrix henry hensley henson
herman hernandez herrera herring hess hester hickman hicks higgins hill hines
hinton hobbs hodge hodges hoffman hogan holcomb holden holder holland holloway
holmes holt hood hooper hoover hopkins hopper horn horne horton house houston
howard howe howell hubbard huber hudson huff huffman hughes hull humphrey hunt
hunter hurley hurst hutchinson hyde ingram irwin jackson jacobs jacobson james
jarvis jefferson jenkins jennings jensen jimenez johns johnson johnston jones
jordan joseph joyce juarez justice kane kaufman keith keller kelley kelly kemp
kennedy kent kerr key kidd kim king kinney kirby kirk kirkland klein kline
knapp knight knowles knox koch kramer krause krueger lamb lambert lancaster
landry lane lang langley lara larsen larson lawrence lawson leach leblanc lee
leon leonard lester levine levy lewis lindsey little livingston lloyd logan
long lopez lott love lowe lowery lucas lynch lynn lyons macdonald macias mack
madden maddox mahoney maldonado malone mann manning marks marquez marsh
marshall martin martinez mason massey mathews mathis matthews maxwell may
mayer maynard mayo mays mcbride mccall mccarthy mcclain mcclure mcconnell
mccormick mccoy mccullough mcdaniel mcdonald mcdowell mcfarland mcgee mcguire
mcintosh mcintyre mckay mckee mckenzie mckinney mclaughlin mclean mcmahon
mcmillan mcneil mcpherson meadows medina mejia melton mendez mendoza mercer
merritt meyer meyers michael middleton miles miller mills miranda mitchell
molina monroe montgomery montoya moody moon mooney moore morales moran moreno
morgan morris morrison morrow morse morton moses mosley moss mueller mullen
mullins munoz murphy murray myers nash navarro neal nelson newman newton
nichols nicholson nielsen nixon noble noel nolan norman norris norton nunez
obrien ochoa oconnor odom odonnell oliver olsen olson oneal oneill orr ortega
ortiz osborn osborne owen owens pace pacheco padilla page palmer park parker
parks parrish parsons pate patel patrick patterson patton paul payne pearson
peck pena pennington perez perkins perry peters petersen peterson petty phelps
phillips pickett pierce pittman pitts pollard poole pope porter potter potts
powell powers pratt preston price prince pruitt pugh quinn ramirez ramos
ramsey randall randolph rasmussen ratliff ray raymond reed reese reeves reid
reilly reyes reynolds rhodes rice rich richard richards richardson richmond
riddle riggs riley rios rivas rivera rivers roach robbins roberson roberts
robertson robinson robles rocha rodgers rodriguez rogers rojas rollins romano
romero rosales rosario rose ross roth rowe rowland roy rubio rush russell
russo rutledge ryan salas salazar salinas sampson sanchez sanders sandoval
sanford santana santiago santos sargent saunders savage sawyer schaefer
schmidt schneider schroeder schultz schwartz scott sears sellers serrano
sexton shaffer shannon sharp shaw shelton shepard shepherd sheppard sherman
shields short silva simmons simon simpson sims singleton skinner slater sloan
small smith snider snow snyder solis solomon sosa soto sparks spears spence
spencer stafford stanley stanton stark steele stein stephens stephenson
stevens stevenson stewart stokes stone stout strickland strong stuart suarez
sullivan summers sutton swanson sweeney sweet sykes talley tanner tate taylor
terrell terry thomas thompson thornton tillman todd torres townsend tran
travis trevino trujillo tucker turner tyler underwood valdez valencia
valentine valenzuela vance vargas vasquez vaughan vaughn vazquez vega velez
villarreal vincent vinson wade wagner walker wall wallace walls walsh walter
walters walton ward ware warner warren washington waters watkins watson watts
weaver webb weber webster weeks weiss welch wells west wheeler whitaker white
whitehead whitfield whitley whitney wiggins wilcox wilder wiley wilkerson
wilkins wilkinson william williams williamson willis wilson winters wise
witt wolf wolfe wong wood woodard woods woodward wooten workman wright wyatt
yang yates york young zamora zhang zimmerman
""".split()

AIRPORTS = """
laguardia heathrow gatwick midway ohare logan dulles hartsfield mccarran
stapleton lambert hobby lovefield luton stansted shannon burbank ontario
oakland sacramento portland spokane boise missoula bozeman helena fargo
bismarck duluth rochester syracuse albany burlington bangor portsmouth
providence bradley newark teterboro trenton harrisburg allentown scranton
pittsburgh akron canton dayton toledo lansing flint saginaw madison milwaukee
moline peoria rockford springfield wichita topeka tulsa norman lubbock amarillo
laredo brownsville pensacola tallahassee gainesville daytona sarasota naples
melbourne orlando tampa memphis nashville knoxville chattanooga lexington
louisville evansville savannah augusta macon columbus charleston greenville
asheville wilmington raleigh durham greensboro norfolk richmond roanoke
lynchburg huntington charlottesville tucson yuma flagstaff prescott reno elko
eugene medford redmond pasco yakima everett bellingham juneau fairbanks nome
kodiak bethel barrow prudhoe anchorage kahului lihue hilo kona mobile
birmingham huntsville monroe shreveport lafayette gulfport jackson meridian
tupelo texarkana abilene waco tyler midland odessa elpaso albuquerque roswell
farmington durango pueblo aspen vail hayden casper cheyenne rapid pierre
aberdeen watertown brainerd bemidji hibbing marquette traverse pellston alpena
erie ithaca elmira binghamton utica watertown massena ogdensburg plattsburgh
presque houlton augusta rockland bar harbor lewiston keene lebanon rutland
montpelier hartford tweed westchester islip farmingdale republic
""".split()

STREET_BASES = """
bedford oakwood elmwood maplewood lakewood hillcrest fairview briarwood
cedarwood norwood westwood eastwood kirkwood greenwood ashford crestwood
ridgewood rosewood sherwood wildwood brentwood fernwood glenwood haywood
heywood inwood kenwood linwood longwood marwood redwood thornwood underwood
yorkwood aberdeen addison albion alder almond amherst anchor andover apple
arbor arcade arden argyle arlington armstrong arnold ascot ashland aspen aster
atlantic auburn audubon autumn avalon bancroft banner barclay barlow barnes
bartlett bayberry baywood beacon beaumont beechwood belmont benson bentley
berkeley berkshire birchwood blackstone blaine blair blossom bluebird bradford
bramble brandon brawley briar bridgewater brighton bristol broadmoor brockton
brookdale brookfield brookside bryant buckingham burlington butler byron
cambridge camden canterbury cardinal carlisle carlton carmel carriage carson
cascade castle catalina chadwick chancellor chandler chapel charter chatham
cherry chester chestnut churchill clarendon clearwater clifton clinton clover
colonial columbia concord congress cornell coventry crescent cypress dartmouth
denton derby devon dorset dover drexel dunbar durham eastgate easton edgewood
ellsworth emerald emerson essex everett exeter fairfax fairfield fairmont
falcon fenwick fillmore fleetwood foxglove franklin fremont frontier fulton
gables galway garfield garland geneva glencoe glendale gloucester goldenrod
granada granite grafton greenbriar greenfield grove hamilton hampshire hampton
hanover harbor harding harrison hartford harvard hastings hawthorne hazelwood
heather hemlock heritage hickory highland hillsboro holloway hollywood
homestead humboldt huntley huron hyacinth imperial independence ironwood ivy
jasmine jefferson juniper keystone kimball kingsley kingston laurel lenox
lexington liberty lincoln linden lombard lorraine lowell madison magnolia
mallard manchester mansfield maple marion marlboro mayfair mayflower meadow
melrose mercer meridian merritt milburn milford monmouth monroe monterey
morgan mulberry myrtle newbury newcastle newport nightingale norfolk norman
northgate norwich nottingham oakdale oakland orchard oxford palmer park
parker pembroke pendleton penrose pepper perry pershing phoenix pickwick
piedmont pinehurst plymouth pomona poplar portland prescott primrose princeton
prospect putnam quincy radcliffe raleigh randolph ravenwood redfield regent
richmond ridgefield riverside rockford rosemont roxbury rugby rutland saxon
sheffield shelby sheridan somerset southgate spruce stanford stanton sterling
stonewall stratford sudbury suffolk summit sunset surrey sussex sutton sycamore
thatcher thorndale trenton trinity tudor tulip vernon victoria vineyard wallace
walnut waverly wellington wentworth westfield westgate westminster weston
whitehall willow winchester windsor winfield woodbine woodland worcester
yardley
""".split()

STREET_SUFFIXES = ["street", "road", "avenue", "lane", "drive", "court"]

CITIES = """
fairhope madison clayton auburn decatur florence gadsden hoover mobile
anniston dothan troy athens juneau sitka ketchikan wasilla palmer kodiak nome
mesa tempe chandler glendale peoria tucson yuma flagstaff prescott surprise
conway jonesboro rogers bentonville searcy fresno oakland anaheim riverside
stockton irvine fremont modesto oxnard fontana ventura berkeley pasadena
pomona torrance orange fullerton concord roseville burbank denver aurora
boulder pueblo arvada westminster greeley longmont loveland hartford bristol
meriden danbury norwich dover newark wilmington smyrna milford orlando tampa
hialeah tallahassee sarasota pensacola gainesville clearwater brandon miramar
largo sanford ocala atlanta savannah macon roswell albany marietta valdosta
smyrna dalton hilo kailua kaneohe waipahu boise nampa meridian caldwell
pocatello chicago aurora rockford joliet naperville peoria elgin waukegan
cicero champaign bloomington decatur evanston skokie berwyn wheaton
indianapolis evansville carmel fishers muncie anderson elkhart mishawaka
davenport dubuque ames ankeny wichita topeka olathe lawrence salina hutchinson
louisville lexington bowling covington owensboro paducah shreveport lafayette
monroe kenner gretna houma portland lewiston bangor auburn augusta baltimore
frederick rockville gaithersburg bowie hagerstown annapolis boston worcester
lowell brockton quincy lynn newton somerville framingham waltham malden
detroit lansing flint dearborn livonia westland troy farmington wyoming
rochester duluth bloomington plymouth woodbury eagan maplewood jackson gulfport
biloxi hattiesburg meridian tupelo greenville springfield columbia joplin
billings missoula bozeman butte helena kalispell omaha lincoln bellevue
kearney reno sparks carson elko concord manchester nashua keene newark trenton
paterson elizabeth edison camden passaic bayonne hoboken albuquerque roswell
farmington clovis hobbs buffalo rochester yonkers syracuse albany utica
schenectady troy binghamton charlotte raleigh durham greensboro fayetteville
wilmington asheville gastonia fargo bismarck minot mandan columbus cleveland
cincinnati toledo akron dayton parma canton youngstown lorain hamilton
springfield kettering elyria tulsa norman lawton edmond moore enid stillwater
muskogee portland salem eugene gresham hillsboro beaverton bend medford
corvallis philadelphia pittsburgh allentown reading scranton bethlehem
lancaster altoona york providence warwick cranston pawtucket woonsocket
charleston columbia greenville sumter florence aiken aberdeen pierre
watertown brookings nashville memphis knoxville chattanooga clarksville
murfreesboro franklin jackson houston dallas austin worth paso arlington
plano laredo lubbock garland irving amarillo brownsville pasadena mesquite
mckinney frisco provo orem sandy ogden layton burlington rutland barre
montpelier richmond norfolk chesapeake arlington alexandria roanoke lynchburg
seattle spokane tacoma vancouver bellevue everett kent yakima renton olympia
charleston huntington parkersburg morgantown wheeling milwaukee madison
racine kenosha appleton waukesha oshkosh cheyenne casper laramie gillette
sheridan debrecen subang solvang zhangxiao lauramie leralynn lafon
""".split()

STATES = """
alabama alaska arizona arkansas california colorado connecticut delaware
florida georgia hawaii idaho illinois indiana iowa kansas kentucky louisiana
maine maryland massachusetts michigan minnesota mississippi missouri montana
nebraska nevada ohio oklahoma oregon pennsylvania tennessee texas utah
vermont virginia washington wisconsin wyoming
""".split()

COMMON_WORDS = """
the be and of a in to have it i that for you he with on do say this they at
but we his from not by she or as what go their can who get if would her all
my make about know will up one time there year so think when which them some
me people take out into just see him your come could now than like other how
then its our two more these want way look first also new because day use no
man find here thing give many well only those tell very even back any good
woman through us life child work down may after should call world over school
still try last ask need too feel three state never become between high really
something most another much family own leave put old while mean keep student
why let great same big group begin seem country help talk where turn problem
every start hand might show part against place such again few case week
company system each right program hear question during play government run
small number off always move night live point believe hold today bring happen
next without before large million must home under water room write mother
area national money story young fact month different lot study book eye job
word though business issue side kind four head far black both long both house
yes since provide service around friend important father sit away until power
hour game often yet line political end among ever stand bad lose however
member pay law meet car city almost include continue set later community name
five once white least president learn real change team minute best several
idea kid body information nothing ago lead social understand whether watch
together follow around parent stop face anything create public already speak
others read level allow add office spend door health person art sure war
history party within grow result open morning walk reason low win research
girl guy early food moment himself air teacher force offer enough education
across although remember foot second boy maybe toward able age policy
everything love process music including consider appear actually buy probably
human wait serve market die send expect sense build stay fall nation plan cut
college interest death course someone experience behind reach local kill six
remain effect yeah suggest class control raise care perhaps little late hard
field else pass former sell major sometimes require along development themselves
report role better economic effort decide rate strong possible heart drug
leader light voice wife whole police mind finally pull return free military
price less according decision explain son hope develop view relationship
carry town road drive arm true federal break difference thank receive value
international building action full model join season society tax director
position player agree especially record pick wear paper special space ground
form support event official whose matter everyone center couple site project
hit base activity star table need court produce eat teach oil half situation
easy cost industry figure street image itself phone either data cover quite
picture clear practice piece land recent describe product doctor wall patient
worker news test movie certain north personal simply third technology catch
step baby computer type attention draw film republican tree source red nearly
organization choose cause hair look point century evidence window difficult
listen soon culture billion chance brother energy period summer realize
hundred available plant likely opportunity term short letter condition choice
single rule daughter administration south husband congress floor campaign
material population economy medical hospital church close thousand risk
current fire future wrong involve defense anyone increase security bank
myself certainly west sport board seek per subject officer private rest
behavior deal performance fight throw top quickly past goal bed order author
fill represent focus foreign drop blood upon agency push nature color
recently store sound reduce note fine near movement page enter share common
poor natural race concern series significant similar hot language usually
response dead rise animal factor decade article shoot east save seven
artist scene stock career despite central eight thus treatment beyond happy
exactly protect military announce less benefit shake weapon approach captain
flight pick bay bridge vale glen dale ford ton burg ville mount lake river
creek spring falls bell crown eagle fox deer bear wolf hawk dove swan finch
robin crane heron gull stone rock cliff ridge valley meadow field forest
timber pine cedar birch aspen holly hazel olive ivy fern moss reed rush sage
thyme basil clover daisy lily rose tulip violet poppy iris pearl ruby coral
amber jade opal topaz agate flint gold silver copper iron steel brass bronze
""".split()

CARRIER_WORDS = """
my name is this i am the please call flying into book a flight to pick me up
at landing stay in live on office it head over house from car work driving
""".split()

# hand-curated ARPAbet for function words, irregular words, and anchors;
# everything else falls through to the rules
CURATED = {
    "a": "AH", "about": "AH B AW T", "after": "AE F T ER", "again": "AH G EH N",
    "against": "AH G EH N S T", "all": "AO L", "am": "AE M", "an": "AE N",
    "and": "AE N D", "any": "EH N IY", "are": "AA R", "as": "AE Z",
    "at": "AE T", "be": "B IY", "because": "B IH K AO Z", "been": "B IH N",
    "before": "B IH F AO R", "being": "B IY IH NG", "book": "B UH K",
    "both": "B OW TH", "but": "B AH T", "by": "B AY", "call": "K AO L",
    "can": "K AE N", "car": "K AA R", "come": "K AH M", "could": "K UH D",
    "day": "D EY", "do": "D UW", "does": "D AH Z", "down": "D AW N",
    "drive": "D R AY V", "driving": "D R AY V IH NG", "each": "IY CH",
    "eye": "AY", "find": "F AY N D", "first": "F ER S T",
    "flight": "F L AY T", "flying": "F L AY IH NG", "for": "F AO R",
    "from": "F R AH M", "give": "G IH V", "go": "G OW", "good": "G UH D",
    "great": "G R EY T", "had": "HH AE D", "has": "HH AE Z",
    "have": "HH AE V", "he": "HH IY", "head": "HH EH D", "hear": "HH IH R",
    "her": "HH ER", "here": "HH IH R", "him": "HH IH M", "his": "HH IH Z",
    "house": "HH AW S", "how": "HH AW", "i": "AY", "if": "IH F",
    "in": "IH N", "into": "IH N T UW", "is": "IH Z", "it": "IH T",
    "its": "IH T S", "just": "JH AH S T", "know": "N OW",
    "landing": "L AE N D IH NG", "like": "L AY K", "live": "L IH V",
    "look": "L UH K", "make": "M EY K", "man": "M AE N", "many": "M EH N IY",
    "may": "M EY", "me": "M IY", "might": "M AY T", "more": "M AO R",
    "most": "M OW S T", "move": "M UW V", "my": "M AY", "name": "N EY M",
    "need": "N IY D", "never": "N EH V ER", "new": "N UW", "no": "N OW",
    "now": "N AW", "of": "AH V", "office": "AO F IH S", "on": "AA N",
    "once": "W AH N S", "one": "W AH N", "only": "OW N L IY",
    "or": "AO R", "other": "AH DH ER", "our": "AW R", "out": "AW T",
    "over": "OW V ER", "people": "P IY P AH L", "pick": "P IH K",
    "place": "P L EY S", "please": "P L IY Z", "put": "P UH T",
    "said": "S EH D", "say": "S EY", "school": "S K UW L", "see": "S IY",
    "she": "SH IY", "should": "SH UH D", "so": "S OW", "some": "S AH M",
    "stay": "S T EY", "such": "S AH CH", "take": "T EY K",
    "tell": "T EH L", "than": "DH AE N", "that": "DH AE T", "the": "DH AH",
    "their": "DH EH R", "them": "DH EH M", "then": "DH EH N",
    "there": "DH EH R", "these": "DH IY Z", "they": "DH EY",
    "thing": "TH IH NG", "think": "TH IH NG K", "this": "DH IH S",
    "those": "DH OW Z", "though": "DH OW", "three": "TH R IY",
    "through": "TH R UW", "time": "T AY M", "to": "T UW",
    "today": "T AH D EY", "together": "T AH G EH DH ER", "too": "T UW",
    "two": "T UW", "up": "AH P", "us": "AH S", "use": "Y UW Z",
    "very": "V EH R IY", "want": "W AA N T", "was": "W AA Z",
    "water": "W AO T ER", "way": "W EY", "we": "W IY", "well": "W EH L",
    "were": "W ER", "what": "W AH T", "when": "W EH N", "where": "W EH R",
    "which": "W IH CH", "while": "W AY L", "who": "HH UW", "why": "W AY",
    "will": "W IH L", "with": "W IH DH", "word": "W ER D",
    "work": "W ER K", "world": "W ER L D", "would": "W UH D",
    "write": "R AY T", "year": "Y IH R", "yes": "Y EH S", "you": "Y UW",
    "your": "Y AO R",
    # anchors and paper-adjacent place/name words
    "bedford": "B EH D F ER D", "laguardia": "L AH G W AA R D IY AH",
    "ohare": "OW HH EH R", "prudhoe": "P R UW D OW",
    "fairhope": "F EH R HH OW P", "debrecen": "D EH B R EH T S EH N",
    "solvang": "S AA L V AE NG", "subang": "S UW B AE NG",
    "burdick": "B ER D IH K", "janie": "JH EY N IY",
    "lafon": "L AH F AA N", "lauramie": "L AO R AH M IY",
    "leralynn": "L EH R AH L IH N", "zhangxiao": "JH AE NG SH AW",
    "street": "S T R IY T", "road": "R OW D", "avenue": "AE V AH N UW",
    "lane": "L EY N", "court": "K AO R T",
}

VOWELS = {"AA","AE","AH","AO","AW","AY","EH","ER","EY","IH","IY","OW","OY","UH","UW"}
VOICELESS = {"P","T","K","F","TH","S","SH","CH","HH"}
SIBILANT = {"S","Z","SH","ZH","CH","JH"}

DIGRAPHS = [
    ("tch", ["CH"]), ("igh", ["AY"]), ("augh", ["AO"]), ("ough", ["AO"]),
    ("sch", ["S", "K"]), ("shr", ["SH", "R"]), ("th", ["TH"]), ("sh", ["SH"]),
    ("ch", ["CH"]), ("ph", ["F"]), ("wh", ["W"]), ("ck", ["K"]),
    ("qu", ["K", "W"]), ("ng", ["NG"]), ("ee", ["IY"]), ("ea", ["IY"]),
    ("oo", ["UW"]), ("ou", ["AW"]), ("ow", ["OW"]), ("ai", ["EY"]),
    ("ay", ["EY"]), ("oa", ["OW"]), ("oy", ["OY"]), ("oi", ["OY"]),
    ("au", ["AO"]), ("aw", ["AO"]), ("ar", ["AA", "R"]), ("er", ["ER"]),
    ("ir", ["ER"]), ("ur", ["ER"]), ("or", ["AO", "R"]), ("ew", ["UW"]),
    ("kn", ["N"]), ("wr", ["R"]), ("mb", ["M"]),
]

SINGLES = {
    "a": ["AE"], "b": ["B"], "c": ["K"], "d": ["D"], "e": ["EH"], "f": ["F"],
    "g": ["G"], "h": ["HH"], "i": ["IH"], "j": ["JH"], "k": ["K"], "l": ["L"],
    "m": ["M"], "n": ["N"], "o": ["AA"], "p": ["P"], "q": ["K"], "r": ["R"],
    "s": ["S"], "t": ["T"], "u": ["AH"], "v": ["V"], "w": ["W"],
    "x": ["K", "S"], "y": ["Y"], "z": ["Z"],
}


def g2p(word: str) -> list[str]:
    """Rule-based letter-to-phoneme for regular words."""
    w = word.lower()
    # final silent e ("-le" keeps a syllabic L)
    if len(w) > 2 and w.endswith("e") and w[-2] not in "aeiou":
        if w.endswith("le"):
            w = w[:-2] + "@l"  # placeholder expanded below
        else:
            w = w[:-1]
    # collapse doubled consonants
    out_chars = []
    for ch in w:
        if out_chars and out_chars[-1] == ch and ch not in "aeiou":
            continue
        out_chars.append(ch)
    w = "".join(out_chars)

    phones: list[str] = []
    i = 0
    while i < len(w):
        if w[i] == "@":  # syllabic-L placeholder
            phones.extend(["AH", "L"])
            i += 2
            continue
        matched = False
        for pat, ph in DIGRAPHS:
            if w.startswith(pat, i):
                phones.extend(ph)
                i += len(pat)
                matched = True
                break
        if matched:
            continue
        ch = w[i]
        if ch == "c" and i + 1 < len(w) and w[i + 1] in "eiy":
            phones.append("S")
        elif ch == "y" and i == len(w) - 1 and len(w) > 1:
            phones.append("IY")
        elif ch in SINGLES:
            phones.extend(SINGLES[ch])
        i += 1
    return phones or ["AH"]


def pronounce(word: str) -> list[str]:
    if word in CURATED:
        return CURATED[word].split()
    return g2p(word)


def plural(word: str, pron: list[str]) -> tuple[str, list[str]]:
    if pron[-1] in SIBILANT:
        return word + "es", pron + ["IH", "Z"]
    if pron[-1] in VOICELESS:
        return word + "s", pron + ["S"]
    return word + "s", pron + ["Z"]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    args = ap.parse_args()
    out = Path(args.out)
    (out / "entities").mkdir(parents=True, exist_ok=True)

    rng = random.Random(20240811)

    # --- entities ---------------------------------------------------------
    full_names = set()
    while len(full_names) < 900:
        full_names.add(f"{rng.choice(FIRST_NAMES)} {rng.choice(LAST_NAMES)}")
    airports = sorted(set(AIRPORTS))
    streets = set()
    while len(streets) < 700:
        streets.add(f"{rng.choice(STREET_BASES)} {rng.choice(STREET_SUFFIXES)}")
    cities_states = set()
    city_list = sorted(set(CITIES))
    while len(cities_states) < 650:
        city = rng.choice(city_list)
        if rng.random() < 0.55:
            cities_states.add(f"{city} {rng.choice(STATES)}")
        else:
            cities_states.add(city)

    catalogs = {
        "full_names": sorted(full_names),
        "airports": airports,
        "street_names": sorted(streets),
        "cities_states": sorted(cities_states),
    }
    for domain, entities in catalogs.items():
        rng.shuffle(entities)  # list position becomes the Zipf rank
        (out / "entities" / f"{domain}.txt").write_text("\n".join(entities) + "\n")

    # --- templates --------------------------------------------------------
    templates = [
        ("full_names", "my name is {entity}"),
        ("full_names", "this is {entity}"),
        ("full_names", "i am {entity}"),
        ("full_names", "the name is {entity}"),
        ("full_names", "please call {entity}"),
        ("airports", "i am at {entity}"),
        ("airports", "flying into {entity}"),
        ("airports", "book a flight to {entity}"),
        ("airports", "pick me up at {entity}"),
        ("airports", "landing at {entity}"),
        ("street_names", "i stay in {entity}"),
        ("street_names", "i live on {entity}"),
        ("street_names", "the office is on {entity}"),
        ("street_names", "it is on {entity}"),
        ("street_names", "head over to {entity}"),
        ("cities_states", "my house is in {entity}"),
        ("cities_states", "i am from {entity}"),
        ("cities_states", "book a car to {entity}"),
        ("cities_states", "i work in {entity}"),
        ("cities_states", "driving to {entity}"),
    ]
    (out / "templates.tsv").write_text(
        "\n".join(f"{d}\t{t}" for d, t in templates) + "\n"
    )

    # --- lexicon ----------------------------------------------------------
    words = set()
    for entities in catalogs.values():
        for e in entities:
            words.update(e.split())
    words.update(CARRIER_WORDS)
    words.update(COMMON_WORDS)
    words.update(FIRST_NAMES)
    words.update(LAST_NAMES)
    words.update(STREET_BASES)
    words.update(STREET_SUFFIXES)
    words.update(CITIES)
    words.update(STATES)
    words.update(CURATED)

    entries = {}
    for w in sorted(words):
        if not w.isalpha():
            continue
        entries[w] = pronounce(w)
    # plural variants thicken the confusion space for nouns and names
    for w in sorted(set(COMMON_WORDS) | set(STREET_BASES) | set(LAST_NAMES)):
        if not w.isalpha() or w.endswith("s") or w not in entries:
            continue
        pw, pp = plural(w, entries[w])
        entries.setdefault(pw, pp)

    lines = [";;; bundled pronunciation lexicon (ARPAbet, no stress markers)"]
    lines.append(f";;; {len(entries)} entries; regenerate with tools/gen_fixtures.py")
    for w in sorted(entries):
        lines.append(f"{w.upper()}  {' '.join(entries[w])}")
    (out / "lexicon.txt").write_text("\n".join(lines) + "\n")

    print(f"entities: {', '.join(f'{k}={len(v)}' for k, v in catalogs.items())}")
    print(f"lexicon entries: {len(entries)}")


if __name__ == "__main__":
    main()
